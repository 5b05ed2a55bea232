//! Central finite-difference verification of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{Fault, Graph, Var};

/// Default probe step for central differences.
pub const DEFAULT_EPSILON: f64 = 1e-5;

/// Every analytic/numeric comparison in the crate passes below this.
pub const GRAD_TOLERANCE: f64 = 1e-4;

/// Compares the analytic gradient of a scalar-valued graph against central
/// finite differences, coordinate by coordinate, over every leaf.
///
/// `build` receives a fresh graph plus one leaf per input tensor and returns
/// the scalar root. The reported figure is the maximum over coordinates of
/// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
pub fn grad_check<F>(build: F, inputs: &[Tensor], epsilon: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    grad_check_with(build, inputs, epsilon, None)
}

pub(crate) fn grad_check_with<F>(
    build: F,
    inputs: &[Tensor],
    epsilon: f64,
    fault: Option<Fault>,
) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if epsilon <= 0.0 {
        return Err(Error::InvalidArgument("epsilon must be positive".into()));
    }
    let mut graph = Graph::new();
    if let Some(f) = fault {
        graph.inject_fault(f);
    }
    let leaves: Vec<Var> = inputs.iter().map(|t| graph.leaf(t.clone())).collect();
    let root = build(&mut graph, &leaves)?;
    if !graph.value(root).is_scalar() {
        return Err(Error::NonScalarRoot {
            shape: graph.value(root).shape().to_vec(),
        });
    }
    let grads = graph.backward(root)?;
    let analytic: Vec<Tensor> = leaves
        .iter()
        .map(|&v| grads.wrt(v).expect("leaf gradient").clone())
        .collect();

    let mut max_err: f64 = 0.0;
    for (li, &leaf) in leaves.iter().enumerate() {
        for coord in 0..inputs[li].len() {
            let base = inputs[li].data()[coord];
            let probe = |value: f64, graph: &mut Graph| -> Result<f64> {
                let mut t = inputs[li].clone();
                t.data_mut()[coord] = value;
                graph.set_leaf(leaf, t)?;
                graph.replay()?;
                Ok(graph.value(root).scalar_value())
            };
            let plus = probe(base + epsilon, &mut graph)?;
            let minus = probe(base - epsilon, &mut graph)?;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = analytic[li].data()[coord];
            let err = (a - numeric).abs() / f64::max(1e-8, a.abs() + numeric.abs());
            max_err = max_err.max(err);
        }
        graph.set_leaf(leaf, inputs[li].clone())?;
    }
    Ok(max_err)
}

/// One named gradcheck result.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: String,
    pub max_rel_err: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < GRAD_TOLERANCE
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let data = (0..shape.iter().product::<usize>())
        .map(|_| rng.gen_range(lo..hi))
        .collect();
    Tensor::from_vec(shape.to_vec(), data).expect("shape")
}

/// Random values bounded away from zero, so ReLU-style kinks stay farther
/// than the probe step from every coordinate.
fn rand_tensor_off_kink(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let data = (0..shape.iter().product::<usize>())
        .map(|_| {
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            sign * rng.gen_range(0.05..1.5)
        })
        .collect();
    Tensor::from_vec(shape.to_vec(), data).expect("shape")
}

/// Scalarizes a tensor-valued node through a random fixed weighting, so the
/// check exercises off-diagonal Jacobian entries.
fn weighted_sum(g: &mut Graph, x: Var, rng: &mut ChaCha8Rng) -> Result<Var> {
    let shape = g.value(x).shape().to_vec();
    let w = g.constant(rand_tensor(rng, &shape, -1.0, 1.0));
    let prod = g.mul(x, w)?;
    g.sum(prod)
}

type Builder = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

fn primitive_case(name: &str, seed: u64) -> Result<(Vec<Tensor>, Builder)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let wrng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let case: (Vec<Tensor>, Builder) = match name {
        "add" => (
            vec![
                rand_tensor(&mut rng, &[3, 4], -2.0, 2.0),
                rand_tensor(&mut rng, &[3, 4], -2.0, 2.0),
            ],
            Box::new(move |g, v| {
                let y = g.add(v[0], v[1])?;
                weighted_sum(g, y, &mut wrng.clone())
            }),
        ),
        "sub" => (
            vec![
                rand_tensor(&mut rng, &[3, 4], -2.0, 2.0),
                rand_tensor(&mut rng, &[3, 4], -2.0, 2.0),
            ],
            Box::new(move |g, v| {
                let y = g.sub(v[0], v[1])?;
                weighted_sum(g, y, &mut wrng.clone())
            }),
        ),
        "mul" => (
            vec![
                rand_tensor(&mut rng, &[3, 4], -2.0, 2.0),
                rand_tensor(&mut rng, &[3, 4], -2.0, 2.0),
            ],
            Box::new(move |g, v| {
                let y = g.mul(v[0], v[1])?;
                weighted_sum(g, y, &mut wrng.clone())
            }),
        ),
        "scale" => (
            vec![rand_tensor(&mut rng, &[5], -2.0, 2.0)],
            Box::new(move |g, v| {
                let y = g.affine(v[0], -1.7, 0.4)?;
                weighted_sum(g, y, &mut wrng.clone())
            }),
        ),
        "matmul" => (
            vec![
                rand_tensor(&mut rng, &[3, 4], -1.0, 1.0),
                rand_tensor(&mut rng, &[4, 2], -1.0, 1.0),
            ],
            Box::new(move |g, v| {
                let y = g.matmul(v[0], v[1])?;
                weighted_sum(g, y, &mut wrng.clone())
            }),
        ),
        "add_bias" => (
            vec![
                rand_tensor(&mut rng, &[3, 4], -1.0, 1.0),
                rand_tensor(&mut rng, &[4], -1.0, 1.0),
            ],
            Box::new(move |g, v| {
                let y = g.add_bias(v[0], v[1])?;
                weighted_sum(g, y, &mut wrng.clone())
            }),
        ),
        "add_bias_channels" => (
            vec![
                rand_tensor(&mut rng, &[2, 3, 2, 2], -1.0, 1.0),
                rand_tensor(&mut rng, &[3], -1.0, 1.0),
            ],
            Box::new(move |g, v| {
                let y = g.add_bias(v[0], v[1])?;
                weighted_sum(g, y, &mut wrng.clone())
            }),
        ),
        "relu" => (
            vec![rand_tensor_off_kink(&mut rng, &[4, 3])],
            Box::new(move |g, v| {
                let y = g.relu(v[0])?;
                weighted_sum(g, y, &mut wrng.clone())
            }),
        ),
        "hinge" => (
            vec![rand_tensor_off_kink(&mut rng, &[6])],
            Box::new(move |g, v| {
                let y = g.hinge(v[0])?;
                weighted_sum(g, y, &mut wrng.clone())
            }),
        ),
        "conv2d" => (
            vec![
                rand_tensor(&mut rng, &[2, 2, 5, 5], -1.0, 1.0),
                rand_tensor(&mut rng, &[3, 2, 3, 3], -1.0, 1.0),
            ],
            Box::new(move |g, v| {
                let y = g.conv2d(v[0], v[1])?;
                weighted_sum(g, y, &mut wrng.clone())
            }),
        ),
        "zero_pad2d" => (
            vec![rand_tensor(&mut rng, &[1, 2, 3, 3], -1.0, 1.0)],
            Box::new(move |g, v| {
                let y = g.zero_pad2d(v[0], 2)?;
                weighted_sum(g, y, &mut wrng.clone())
            }),
        ),
        "max_pool2x2" => (
            vec![rand_tensor(&mut rng, &[1, 2, 4, 4], -1.0, 1.0)],
            Box::new(move |g, v| {
                let y = g.max_pool2x2(v[0])?;
                weighted_sum(g, y, &mut wrng.clone())
            }),
        ),
        "softmax" => (
            vec![rand_tensor(&mut rng, &[3, 5], -2.0, 2.0)],
            Box::new(move |g, v| {
                let y = g.softmax(v[0])?;
                weighted_sum(g, y, &mut wrng.clone())
            }),
        ),
        "square" => (
            vec![rand_tensor(&mut rng, &[7], -2.0, 2.0)],
            Box::new(move |g, v| {
                let y = g.square(v[0])?;
                weighted_sum(g, y, &mut wrng.clone())
            }),
        ),
        "sqrt" => (
            vec![rand_tensor(&mut rng, &[7], 0.3, 3.0)],
            Box::new(move |g, v| {
                let y = g.sqrt(v[0])?;
                weighted_sum(g, y, &mut wrng.clone())
            }),
        ),
        "log_clamped" => (
            vec![rand_tensor(&mut rng, &[6], 0.05, 1.0)],
            Box::new(move |g, v| {
                let y = g.log_clamped(v[0])?;
                weighted_sum(g, y, &mut wrng.clone())
            }),
        ),
        "sum" => (
            vec![rand_tensor(&mut rng, &[2, 3], -2.0, 2.0)],
            Box::new(move |g, v| g.sum(v[0])),
        ),
        "mean" => (
            vec![rand_tensor(&mut rng, &[2, 3], -2.0, 2.0)],
            Box::new(move |g, v| g.mean(v[0])),
        ),
        "reshape" => (
            vec![rand_tensor(&mut rng, &[2, 6], -2.0, 2.0)],
            Box::new(move |g, v| {
                let y = g.reshape(v[0], vec![3, 4])?;
                weighted_sum(g, y, &mut wrng.clone())
            }),
        ),
        "gather_rows" => (
            vec![rand_tensor(&mut rng, &[4, 3], -2.0, 2.0)],
            Box::new(move |g, v| {
                let y = g.gather_rows(v[0], vec![2, 0, 2, 3])?;
                weighted_sum(g, y, &mut wrng.clone())
            }),
        ),
        "norm_diff_vec" => (
            vec![
                rand_tensor(&mut rng, &[5], 1.0, 2.0),
                rand_tensor(&mut rng, &[5], -2.0, -1.0),
            ],
            Box::new(move |g, v| g.norm_diff(v[0], v[1])),
        ),
        "norm_diff_rows" => (
            vec![
                rand_tensor(&mut rng, &[4, 3], 1.0, 2.0),
                rand_tensor(&mut rng, &[4, 3], -2.0, -1.0),
            ],
            Box::new(move |g, v| {
                let y = g.norm_diff(v[0], v[1])?;
                weighted_sum(g, y, &mut wrng.clone())
            }),
        ),
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown primitive `{other}`"
            )))
        }
    };
    Ok(case)
}

pub const PRIMITIVES: &[&str] = &[
    "add",
    "sub",
    "mul",
    "scale",
    "matmul",
    "add_bias",
    "add_bias_channels",
    "relu",
    "hinge",
    "conv2d",
    "zero_pad2d",
    "max_pool2x2",
    "softmax",
    "square",
    "sqrt",
    "log_clamped",
    "sum",
    "mean",
    "reshape",
    "gather_rows",
    "norm_diff_vec",
    "norm_diff_rows",
];

/// Worst relative error for one primitive over `rounds` seeded inputs.
pub fn check_primitive(name: &str, seed: u64, rounds: u64) -> Result<f64> {
    check_primitive_with(name, seed, rounds, None)
}

pub(crate) fn check_primitive_with(
    name: &str,
    seed: u64,
    rounds: u64,
    fault: Option<Fault>,
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for round in 0..rounds {
        let (inputs, build) = primitive_case(name, seed.wrapping_add(round))?;
        let err = grad_check_with(|g, v| build(g, v), &inputs, DEFAULT_EPSILON, fault)?;
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Gradchecks every primitive over `rounds` seeded inputs each.
pub fn primitive_suite(seed: u64, rounds: u64) -> Result<Vec<CheckReport>> {
    PRIMITIVES
        .iter()
        .map(|name| {
            Ok(CheckReport {
                name: (*name).to_string(),
                max_rel_err: check_primitive(name, seed, rounds)?,
            })
        })
        .collect()
}
