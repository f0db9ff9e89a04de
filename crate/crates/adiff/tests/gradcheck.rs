//! Finite-difference verification of every differentiable layer and op.
//!
//! Losses are weighted sums with non-uniform weights, so each output
//! element influences the loss differently; a transposed or misrouted
//! gradient cannot cancel out the way it could under a plain sum.

use hfbm_adiff::nn::{
    BatchNorm, Dropout, FeedForward, LayerNorm, Linear, MultiHeadAttention, TransformerBlock,
};
use hfbm_adiff::{
    gradcheck_inputs, gradcheck_module, Graph, Mode, NodeId, Rng, Scalar, Session, Tensor,
};

fn random_tensor<T: Scalar>(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<T> {
    let numel: usize = shape.iter().product();
    let values: Vec<f64> = (0..numel).map(|_| rng.range(lo, hi)).collect();
    Tensor::from_f64_slice(shape.to_vec(), &values)
}

/// Values whose magnitudes stay in [0.3, 1.4], so a +-1e-3 probe never
/// crosses the kink of relu at zero.
fn kink_free_tensor<T: Scalar>(rng: &mut Rng, shape: &[usize]) -> Tensor<T> {
    let numel: usize = shape.iter().product();
    let values: Vec<f64> = (0..numel)
        .map(|_| {
            let magnitude = rng.range(0.3, 1.4);
            if rng.uniform() < 0.5 {
                -magnitude
            } else {
                magnitude
            }
        })
        .collect();
    Tensor::from_f64_slice(shape.to_vec(), &values)
}

fn loss_weights(numel: usize) -> Vec<f64> {
    (0..numel)
        .map(|i| {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            sign * (0.25 + 0.13 * (i % 7) as f64)
        })
        .collect()
}

fn weighted_sum<T: Scalar>(g: &mut Graph<T>, x: NodeId) -> NodeId {
    let shape = g.value(x).shape().to_vec();
    let w = g.constant(Tensor::from_f64_slice(shape, &loss_weights(g.value(x).numel())));
    let p = g.mul(x, w);
    g.sum_all(p)
}

fn weighted_sum_s<T: Scalar>(s: &mut Session<T>, x: NodeId) -> NodeId {
    let shape = s.graph.value(x).shape().to_vec();
    let numel = s.graph.value(x).numel();
    let w = s.constant(Tensor::from_f64_slice(shape, &loss_weights(numel)));
    let p = s.graph.mul(x, w);
    s.graph.sum_all(p)
}

#[test]
fn elementwise_arithmetic() {
    let mut rng = Rng::new(100);
    let a: Tensor<f64> = random_tensor(&mut rng, &[3, 4], -1.5, 1.5);
    let b = random_tensor(&mut rng, &[3, 4], -1.5, 1.5);
    gradcheck_inputs(&[a, b], 1e-3, |g, ids| {
        let s = g.add(ids[0], ids[1]);
        let d = g.sub(s, ids[1]);
        let p = g.mul(d, ids[1]);
        let scaled = g.scale(p, 0.7);
        weighted_sum(g, scaled)
    })
    .assert_below(1e-5);
}

#[test]
fn relu_off_its_kink() {
    let mut rng = Rng::new(101);
    let x: Tensor<f64> = kink_free_tensor(&mut rng, &[4, 5]);
    gradcheck_inputs(&[x], 1e-3, |g, ids| {
        let y = g.relu(ids[0]);
        weighted_sum(g, y)
    })
    .assert_below(1e-5);
}

#[test]
fn gelu_everywhere() {
    let mut rng = Rng::new(102);
    let x: Tensor<f64> = random_tensor(&mut rng, &[4, 5], -2.5, 2.5);
    gradcheck_inputs(&[x], 1e-3, |g, ids| {
        let y = g.gelu(ids[0]);
        weighted_sum(g, y)
    })
    .assert_below(1e-5);
}

#[test]
fn softmax_rows() {
    let mut rng = Rng::new(103);
    let x: Tensor<f64> = random_tensor(&mut rng, &[5, 6], -2.0, 2.0);
    gradcheck_inputs(&[x], 1e-3, |g, ids| {
        let y = g.softmax_lastdim(ids[0]);
        weighted_sum(g, y)
    })
    .assert_below(1e-5);
}

#[test]
fn matmul_and_bias() {
    let mut rng = Rng::new(104);
    let a: Tensor<f64> = random_tensor(&mut rng, &[4, 3], -1.0, 1.0);
    let b = random_tensor(&mut rng, &[3, 5], -1.0, 1.0);
    let bias = random_tensor(&mut rng, &[5], -0.5, 0.5);
    gradcheck_inputs(&[a, b, bias], 1e-3, |g, ids| {
        let p = g.matmul(ids[0], ids[1]);
        let y = g.add_bias(p, ids[2]);
        weighted_sum(g, y)
    })
    .assert_below(1e-5);
}

#[test]
fn batched_matmul_all_transpose_pairs() {
    for (case, &(ta, tb)) in [(false, false), (false, true), (true, false), (true, true)].iter().enumerate() {
        let mut rng = Rng::new(105 + case as u64);
        let (m, k, n) = (3, 4, 2);
        let a_shape = if ta { [2, k, m] } else { [2, m, k] };
        let b_shape = if tb { [2, n, k] } else { [2, k, n] };
        let a: Tensor<f64> = random_tensor(&mut rng, &a_shape, -1.0, 1.0);
        let b = random_tensor(&mut rng, &b_shape, -1.0, 1.0);
        gradcheck_inputs(&[a, b], 1e-3, move |g, ids| {
            let y = g.bmm(ids[0], ids[1], ta, tb);
            weighted_sum(g, y)
        })
        .assert_below(1e-5);
    }
}

#[test]
fn pooling_over_axes() {
    let mut rng = Rng::new(110);
    // Distinct magnitudes keep every argmax margin far wider than the probe.
    let base: Vec<f64> = {
        let mut v: Vec<f64> = (0..24).map(|i| 0.05 * i as f64).collect();
        for i in (1..24).rev() {
            let j = (rng.next_u64() % (i as u64 + 1)) as usize;
            v.swap(i, j);
        }
        v
    };
    let x = Tensor::<f64>::from_f64_slice(vec![2, 3, 4], &base);
    gradcheck_inputs(&[x.clone()], 1e-3, |g, ids| {
        let y = g.max_over_axis(ids[0], 1);
        weighted_sum(g, y)
    })
    .assert_below(1e-5);
    gradcheck_inputs(&[x], 1e-3, |g, ids| {
        let y = g.mean_over_axis(ids[0], 2);
        weighted_sum(g, y)
    })
    .assert_below(1e-5);
}

#[test]
fn shape_surgery_concat_select_swap() {
    let mut rng = Rng::new(111);
    let a: Tensor<f64> = random_tensor(&mut rng, &[2, 3, 2], -1.0, 1.0);
    let b = random_tensor(&mut rng, &[2, 2, 2], -1.0, 1.0);
    gradcheck_inputs(&[a, b], 1e-3, |g, ids| {
        let joined = g.concat(1, &[ids[0], ids[1]]);
        let picked = g.index_select(joined, 1, &[0, 4, 4, 2]);
        let spun = g.swap_axes(picked, 0, 2);
        let flat = g.reshape(spun, &[16]);
        weighted_sum(g, flat)
    })
    .assert_below(1e-5);
}

#[test]
fn per_batch_row_gathering() {
    let mut rng = Rng::new(112);
    let x: Tensor<f64> = random_tensor(&mut rng, &[2, 5, 3], -1.0, 1.0);
    gradcheck_inputs(&[x], 1e-3, |g, ids| {
        let y = g.gather_per_batch(ids[0], &[vec![4, 0, 0], vec![1, 2, 3]]);
        weighted_sum(g, y)
    })
    .assert_below(1e-5);
}

#[test]
fn chamfer_through_the_prediction() {
    // Clustered sites keep every nearest-neighbor pairing stable under the
    // probe, so the piecewise-smooth loss is smooth where it is evaluated.
    let mut rng = Rng::new(113);
    let sites = [
        [0.0, 0.0, 0.0],
        [2.0, 0.0, 0.0],
        [0.0, 2.0, 0.0],
        [0.0, 0.0, 2.0],
    ];
    let jitter = |rng: &mut Rng| rng.range(-0.05, 0.05);
    let mut pred = Vec::new();
    let mut target = Vec::new();
    for group in 0..2 {
        for site in &sites {
            let spread = group as f64 * 0.3;
            pred.extend([site[0] + jitter(&mut rng) + spread, site[1] + jitter(&mut rng), site[2]]);
            target.extend([site[0] + jitter(&mut rng) + spread, site[1], site[2] + jitter(&mut rng)]);
        }
    }
    let pred = Tensor::<f64>::from_f64_slice(vec![2, 4, 3], &pred);
    let target = Tensor::<f64>::from_f64_slice(vec![2, 4, 3], &target);
    gradcheck_inputs(&[pred], 1e-3, move |g, ids| g.chamfer_batch(ids[0], &target))
        .assert_below(1e-5);
}

#[test]
fn cross_entropy_over_logits() {
    let mut rng = Rng::new(114);
    let logits: Tensor<f64> = random_tensor(&mut rng, &[4, 3], -1.5, 1.5);
    gradcheck_inputs(&[logits], 1e-3, |g, ids| g.cross_entropy_mean(ids[0], &[0, 2, 1, 0]))
        .assert_below(1e-5);
}

#[test]
fn linear_layer() {
    let mut rng = Rng::new(120);
    let mut layer = Linear::<f64>::new("lin", 4, 3, &mut rng);
    let x = random_tensor(&mut rng, &[5, 4], -1.0, 1.0);
    gradcheck_module(&mut layer, &[x], Mode::Train, 0, 1e-3, |m, s, ids| {
        let y = m.forward(s, ids[0]);
        weighted_sum_s(s, y)
    })
    .assert_below(1e-5);
}

#[test]
fn layer_norm_layer() {
    let mut rng = Rng::new(121);
    let mut layer = LayerNorm::<f64>::new("ln", 6);
    let x = random_tensor(&mut rng, &[4, 6], -1.5, 1.5);
    gradcheck_module(&mut layer, &[x], Mode::Train, 0, 1e-3, |m, s, ids| {
        let y = m.forward(s, ids[0]);
        weighted_sum_s(s, y)
    })
    .assert_below(1e-5);
}

#[test]
fn batch_norm_layer_in_train_mode() {
    let mut rng = Rng::new(122);
    let mut layer = BatchNorm::<f64>::new("bn", 3);
    let x = random_tensor(&mut rng, &[6, 3], -1.5, 1.5);
    gradcheck_module(&mut layer, &[x], Mode::Train, 0, 1e-3, |m, s, ids| {
        let y = m.forward(s, ids[0]);
        weighted_sum_s(s, y)
    })
    .assert_below(1e-5);
}

#[test]
fn dropout_with_a_fixed_seed() {
    let mut rng = Rng::new(123);
    let drop = Dropout::new(0.3);
    // Dropout has no parameters; a linear layer supplies some so the check
    // exercises the masked path end to end.
    let mut layer = Linear::<f64>::new("lin", 4, 4, &mut rng);
    let x = random_tensor(&mut rng, &[3, 4], -1.0, 1.0);
    gradcheck_module(&mut layer, &[x], Mode::Train, 9, 1e-3, move |m, s, ids| {
        let y = m.forward(s, ids[0]);
        let y = drop.forward(s, y);
        weighted_sum_s(s, y)
    })
    .assert_below(1e-5);
}

#[test]
fn multi_head_attention() {
    let mut rng = Rng::new(124);
    let mut layer = MultiHeadAttention::<f64>::new("attn", 8, 2, &mut rng);
    let x = random_tensor(&mut rng, &[2, 3, 8], -1.0, 1.0);
    gradcheck_module(&mut layer, &[x], Mode::Train, 0, 1e-3, |m, s, ids| {
        let y = m.forward(s, ids[0]);
        weighted_sum_s(s, y)
    })
    .assert_below(1e-5);
}

#[test]
fn feed_forward() {
    let mut rng = Rng::new(125);
    let mut layer = FeedForward::<f64>::new("ffn", 6, &mut rng);
    let x = random_tensor(&mut rng, &[3, 6], -1.0, 1.0);
    gradcheck_module(&mut layer, &[x], Mode::Train, 0, 1e-3, |m, s, ids| {
        let y = m.forward(s, ids[0]);
        weighted_sum_s(s, y)
    })
    .assert_below(1e-5);
}

#[test]
fn whole_transformer_block() {
    let mut rng = Rng::new(126);
    let mut block = TransformerBlock::<f64>::new("blk", 8, 2, &mut rng);
    let x = random_tensor(&mut rng, &[2, 3, 8], -1.0, 1.0);
    gradcheck_module(&mut block, &[x], Mode::Train, 0, 1e-3, |m, s, ids| {
        let y = m.forward(s, ids[0]);
        weighted_sum_s(s, y)
    })
    .assert_below(1e-5);
}

#[test]
fn thirty_two_bit_engine_passes_at_loose_tolerance() {
    let mut rng = Rng::new(130);
    let mut layer = Linear::<f32>::new("lin", 4, 3, &mut rng);
    let x: Tensor<f32> = random_tensor(&mut rng, &[4, 4], -1.0, 1.0);
    gradcheck_module(&mut layer, &[x], Mode::Train, 0, 1e-3, |m, s, ids| {
        let y = m.forward(s, ids[0]);
        weighted_sum_s(s, y)
    })
    .assert_below(1e-2);

    let mut rng = Rng::new(131);
    let mut block = TransformerBlock::<f32>::new("blk", 8, 2, &mut rng);
    let x: Tensor<f32> = random_tensor(&mut rng, &[2, 3, 8], -1.0, 1.0);
    gradcheck_module(&mut block, &[x], Mode::Train, 0, 1e-3, |m, s, ids| {
        let y = m.forward(s, ids[0]);
        weighted_sum_s(s, y)
    })
    .assert_below(1e-2);

    let mut rng = Rng::new(132);
    let sm: Tensor<f32> = random_tensor(&mut rng, &[4, 4], -1.5, 1.5);
    gradcheck_inputs(&[sm], 1e-3, |g, ids| {
        let y = g.softmax_lastdim(ids[0]);
        weighted_sum(g, y)
    })
    .assert_below(1e-2);
}
