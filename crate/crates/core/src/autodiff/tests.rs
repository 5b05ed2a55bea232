use super::gradcheck::{check_primitive, grad_check, PRIMITIVES};
use super::*;
use crate::error::Error;

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::from_vec(shape.to_vec(), data.to_vec()).unwrap()
}

#[test]
fn relu_clamps_negatives() {
    let mut g = Graph::new();
    let x = g.leaf(t(&[3], &[-1.0, 0.0, 2.0]));
    let y = g.relu(x).unwrap();
    assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
}

#[test]
fn softmax_of_equal_logits_is_uniform() {
    let mut g = Graph::new();
    let x = g.leaf(t(&[2], &[0.0, 0.0]));
    let y = g.softmax(x).unwrap();
    assert_eq!(g.value(y).data(), &[0.5, 0.5]);
}

/// Direct-summation oracle for valid-padding stride-1 convolution.
fn conv_oracle(input: &Tensor, kernel: &Tensor) -> Vec<f64> {
    let (n, ci, h, w) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    let (co, _, kh, kw) = (
        kernel.shape()[0],
        kernel.shape()[1],
        kernel.shape()[2],
        kernel.shape()[3],
    );
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let mut out = vec![0.0; n * co * oh * ow];
    for img in 0..n {
        for oc in 0..co {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ic in 0..ci {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                acc += input.data()[((img * ci + ic) * h + oy + ky) * w + ox + kx]
                                    * kernel.data()[((oc * ci + ic) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out[((img * co + oc) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    out
}

#[test]
fn conv2d_ones_matches_direct_summation() {
    let mut g = Graph::new();
    let img = g.leaf(Tensor::ones(&[1, 1, 4, 4]));
    let ker = g.leaf(Tensor::ones(&[1, 1, 3, 3]));
    let y = g.conv2d(img, ker).unwrap();
    assert_eq!(g.value(y).shape(), &[1, 1, 2, 2]);
    assert_eq!(g.value(y).data(), &[9.0, 9.0, 9.0, 9.0]);
    let oracle = conv_oracle(g.value(img), g.value(ker));
    assert_eq!(g.value(y).data(), &oracle[..]);
}

#[test]
fn conv2d_random_matches_direct_summation() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let input = Tensor::from_vec(
        vec![2, 3, 5, 6],
        (0..180).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let kernel = Tensor::from_vec(
        vec![4, 3, 3, 2],
        (0..72).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let oracle = conv_oracle(&input, &kernel);
    let mut g = Graph::new();
    let (i, k) = (g.leaf(input), g.leaf(kernel));
    let y = g.conv2d(i, k).unwrap();
    for (a, b) in g.value(y).data().iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn backward_of_sum_is_all_ones() {
    let mut g = Graph::new();
    let x = g.leaf(t(&[2, 3], &[1.0, -2.0, 3.0, 0.5, 9.0, -4.0]));
    let s = g.sum(x).unwrap();
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.wrt(x).unwrap().data(), &[1.0; 6]);
}

#[test]
fn relu_backward_uses_zero_subgradient_at_origin() {
    let mut g = Graph::new();
    let x = g.leaf(t(&[3], &[-1.0, 2.0, 0.0]));
    let y = g.relu(x).unwrap();
    let s = g.sum(y).unwrap();
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.wrt(x).unwrap().data(), &[0.0, 1.0, 0.0]);
}

#[test]
fn half_squared_distance_gradient() {
    // d/da of 0.5 * ||a - b||^2 is a - b.
    let mut g = Graph::new();
    let a = g.leaf(t(&[2], &[1.0, 0.0]));
    let b = g.leaf(t(&[2], &[0.0, 1.0]));
    let d = g.sub(a, b).unwrap();
    let sq = g.square(d).unwrap();
    let sum = g.sum(sq).unwrap();
    let half = g.scale(sum, 0.5).unwrap();
    let grads = g.backward(half).unwrap();
    assert_eq!(grads.wrt(a).unwrap().data(), &[1.0, -1.0]);
    assert_eq!(grads.wrt(b).unwrap().data(), &[-1.0, 1.0]);
}

#[test]
fn backward_rejects_non_scalar_root() {
    let mut g = Graph::new();
    let x = g.leaf(t(&[2], &[1.0, 2.0]));
    let y = g.relu(x).unwrap();
    assert!(matches!(
        g.backward(y),
        Err(Error::NonScalarRoot { shape }) if shape == vec![2]
    ));
}

#[test]
fn unused_leaf_gets_zero_gradient() {
    let mut g = Graph::new();
    let x = g.leaf(t(&[2], &[1.0, 2.0]));
    let unused = g.leaf(t(&[3], &[0.0, 0.0, 0.0]));
    let s = g.sum(x).unwrap();
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.wrt(unused).unwrap().data(), &[0.0, 0.0, 0.0]);
}

#[test]
fn shape_mismatch_names_op_and_shapes() {
    let mut g = Graph::new();
    let a = g.leaf(Tensor::zeros(&[2, 3]));
    let b = g.leaf(Tensor::zeros(&[3, 3]));
    let err = g.add(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("add"), "{msg}");
    assert!(msg.contains("[2, 3]") && msg.contains("[3, 3]"), "{msg}");
}

#[test]
fn matmul_inner_dim_checked() {
    let mut g = Graph::new();
    let a = g.leaf(Tensor::zeros(&[2, 3]));
    let b = g.leaf(Tensor::zeros(&[4, 5]));
    assert!(matches!(
        g.matmul(a, b),
        Err(Error::ShapeMismatch { op: "matmul", .. })
    ));
}

#[test]
fn max_pool_ties_route_to_first_index() {
    let mut g = Graph::new();
    // Window of identical values: gradient must land on the row-major first.
    let x = g.leaf(t(&[1, 1, 2, 2], &[5.0, 5.0, 5.0, 5.0]));
    let y = g.max_pool2x2(x).unwrap();
    assert_eq!(g.value(y).data(), &[5.0]);
    let s = g.sum(y).unwrap();
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.wrt(x).unwrap().data(), &[1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn max_pool_drops_odd_edges() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::from_vec(vec![1, 1, 3, 3], (1..=9).map(f64::from).collect()).unwrap());
    let y = g.max_pool2x2(x).unwrap();
    assert_eq!(g.value(y).shape(), &[1, 1, 1, 1]);
    assert_eq!(g.value(y).data(), &[5.0]);
}

#[test]
fn forward_replay_is_deterministic() {
    let mut g = Graph::new();
    let x = g.leaf(t(&[3], &[0.3, -1.2, 7.5]));
    let sq = g.square(x).unwrap();
    let s = g.sum(sq).unwrap();
    let first = g.value(s).scalar_value();
    let out = g
        .forward(&[(x, t(&[3], &[0.3, -1.2, 7.5]))], s)
        .unwrap();
    assert_eq!(first.to_bits(), out.scalar_value().to_bits());
}

#[test]
fn backward_is_linear_in_the_root() {
    let mut g = Graph::new();
    let x = g.leaf(t(&[3], &[0.4, -0.2, 1.1]));
    let sq = g.square(x).unwrap();
    let a = g.sum(sq).unwrap();
    let b = g.mean(x).unwrap();
    let total = g.add(a, b).unwrap();
    let ga = g.backward(a).unwrap();
    let gb = g.backward(b).unwrap();
    let gt = g.backward(total).unwrap();
    for i in 0..3 {
        let lhs = gt.wrt(x).unwrap().data()[i];
        let rhs = ga.wrt(x).unwrap().data()[i] + gb.wrt(x).unwrap().data()[i];
        assert!((lhs - rhs).abs() < 1e-12);
    }
}

#[test]
fn norm_diff_zero_distance_has_zero_gradient() {
    let mut g = Graph::new();
    let a = g.leaf(t(&[2], &[1.0, 2.0]));
    let b = g.leaf(t(&[2], &[1.0, 2.0]));
    let d = g.norm_diff(a, b).unwrap();
    let grads = g.backward(d).unwrap();
    assert_eq!(grads.wrt(a).unwrap().data(), &[0.0, 0.0]);
}

#[test]
fn grad_check_sum_of_squares() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let x = Tensor::from_vec(vec![3], (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    // Closed-form gradient of sum(x^2) is 2x; the finite-difference check
    // must agree to much better than the suite tolerance.
    let err = grad_check(
        |g, v| {
            let sq = g.square(v[0])?;
            g.sum(sq)
        },
        &[x.clone()],
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-6, "relative error {err}");

    let mut g = Graph::new();
    let v = g.leaf(x.clone());
    let sq = g.square(v).unwrap();
    let s = g.sum(sq).unwrap();
    let grads = g.backward(s).unwrap();
    for (got, want) in grads.wrt(v).unwrap().data().iter().zip(x.data()) {
        assert!((got - 2.0 * want).abs() < 1e-12);
    }
}

#[test]
fn every_primitive_grad_checks_over_twenty_seeds() {
    for name in PRIMITIVES {
        let worst = check_primitive(name, 0xC0FFEE, 20).unwrap();
        assert!(
            worst < super::gradcheck::GRAD_TOLERANCE,
            "{name}: worst relative error {worst}"
        );
    }
}

#[test]
fn injected_relu_fault_is_caught() {
    let worst =
        super::gradcheck::check_primitive_with("relu", 1, 3, Some(Fault::ReluBackwardOffset))
            .unwrap();
    assert!(worst > super::gradcheck::GRAD_TOLERANCE);
}
