//! Central finite-difference verification of recorded gradients.
//!
//! The relative error divides by max(|analytic|, |numeric|, 0.1): the 0.1
//! floor turns near-zero gradients into an absolute comparison, which keeps
//! the test meaningful above the ~1e-7 noise floor of central differences
//! at h = 1e-3 without ever dividing by a vanishing denominator.

use crate::graph::{Graph, NodeId};
use crate::nn::{Mode, ParamModule, Session, TensorRole};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub checked: usize,
    pub worst: String,
}

impl GradReport {
    fn observe(&mut self, rel: f64, site: impl Fn() -> String) {
        self.checked += 1;
        if rel > self.max_rel_err {
            self.max_rel_err = rel;
            self.worst = site();
        }
    }

    pub fn assert_below(&self, tol: f64) {
        assert!(
            self.max_rel_err < tol,
            "gradient check failed: relative error {:.3e} at {} (checked {} elements, tolerance {tol:.0e})",
            self.max_rel_err,
            self.worst,
            self.checked
        );
    }
}

fn new_report() -> GradReport {
    GradReport { max_rel_err: 0.0, checked: 0, worst: "nothing checked".to_string() }
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(0.1)
}

/// Checks d(loss)/d(input element) for a scalar-valued graph builder over
/// plain input tensors.
pub fn gradcheck_inputs<T: Scalar>(
    inputs: &[Tensor<T>],
    h: f64,
    build: impl Fn(&mut Graph<T>, &[NodeId]) -> NodeId,
) -> GradReport {
    let mut g: Graph<T> = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let loss = build(&mut g, &ids);
    g.backward(loss);
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .zip(inputs)
        .map(|(&id, t)| {
            g.grad(id).map_or_else(|| vec![0.0; t.numel()], |gr| gr.to_f64_vec())
        })
        .collect();

    let eval = |tensors: &[Tensor<T>]| -> f64 {
        let mut g: Graph<T> = Graph::new();
        let ids: Vec<NodeId> = tensors.iter().map(|t| g.leaf(t.clone(), false)).collect();
        let loss = build(&mut g, &ids);
        g.value(loss).data()[0].to_f64()
    };

    let mut report = new_report();
    let mut work: Vec<Tensor<T>> = inputs.to_vec();
    for (which, tensor) in inputs.iter().enumerate() {
        for i in 0..tensor.numel() {
            let origin = tensor.data()[i];
            let plus = T::from_f64(origin.to_f64() + h);
            let minus = T::from_f64(origin.to_f64() - h);
            work[which].data_mut()[i] = plus;
            let f_plus = eval(&work);
            work[which].data_mut()[i] = minus;
            let f_minus = eval(&work);
            work[which].data_mut()[i] = origin;
            let numeric = (f_plus - f_minus) / (plus.to_f64() - minus.to_f64());
            report.observe(rel_err(analytic[which][i], numeric), || {
                format!("input {which} element {i}")
            });
        }
    }
    report
}

fn read_param<T: Scalar, M: ParamModule<T>>(model: &M, target: &str, index: usize) -> T {
    let mut found = None;
    model.visit_tensors(&mut |name, _, value| {
        if name == target {
            found = Some(value.data()[index]);
        }
    });
    found.expect("parameter name vanished during gradient check")
}

fn write_param<T: Scalar, M: ParamModule<T>>(model: &mut M, target: &str, index: usize, v: T) {
    model.visit_tensors_mut(&mut |name, _, value| {
        if name == target {
            value.data_mut()[index] = v;
        }
    });
}

/// Checks every trainable parameter element and every input element of a
/// module's scalar loss. Each probe replays the forward on a fresh session
/// with the same seed, so stochastic pieces like dropout repeat the same
/// masks. Parameters are restored bitwise afterwards; batch-norm running
/// statistics do drift across the replays, so pass a throwaway model.
pub fn gradcheck_module<T: Scalar, M: ParamModule<T>>(
    model: &mut M,
    inputs: &[Tensor<T>],
    mode: Mode,
    seed: u64,
    h: f64,
    forward: impl Fn(&M, &mut Session<T>, &[NodeId]) -> NodeId,
) -> GradReport {
    let mut s: Session<T> = Session::new(mode, seed);
    let ids: Vec<NodeId> = inputs.iter().map(|t| s.graph.leaf(t.clone(), true)).collect();
    let loss = forward(model, &mut s, &ids);
    assert_eq!(
        s.value(loss).numel(),
        1,
        "gradient check needs a scalar loss, got shape {}",
        s.value(loss).shape_string()
    );
    s.backward(loss);
    let param_grads = s.collect_grads(model);
    let input_grads: Vec<Vec<f64>> = ids
        .iter()
        .zip(inputs)
        .map(|(&id, t)| {
            s.graph.grad(id).map_or_else(|| vec![0.0; t.numel()], |gr| gr.to_f64_vec())
        })
        .collect();
    drop(s);

    let eval = |model: &M, tensors: &[Tensor<T>]| -> f64 {
        let mut s: Session<T> = Session::new(mode, seed);
        let ids: Vec<NodeId> = tensors.iter().map(|t| s.graph.leaf(t.clone(), false)).collect();
        let loss = forward(model, &mut s, &ids);
        s.value(loss).data()[0].to_f64()
    };

    let mut report = new_report();

    let mut param_sizes: Vec<(String, usize)> = Vec::new();
    model.visit_tensors(&mut |name, role, value| {
        if role == TensorRole::Trainable {
            param_sizes.push((name.to_string(), value.numel()));
        }
    });
    for (name, numel) in &param_sizes {
        let Some(analytic) = param_grads.get(name) else { continue };
        for i in 0..*numel {
            let origin = read_param(model, name, i);
            let plus = T::from_f64(origin.to_f64() + h);
            let minus = T::from_f64(origin.to_f64() - h);
            write_param(model, name, i, plus);
            let f_plus = eval(model, inputs);
            write_param(model, name, i, minus);
            let f_minus = eval(model, inputs);
            write_param(model, name, i, origin);
            let numeric = (f_plus - f_minus) / (plus.to_f64() - minus.to_f64());
            report.observe(rel_err(analytic.data()[i].to_f64(), numeric), || {
                format!("{name} element {i}")
            });
        }
    }

    let mut work: Vec<Tensor<T>> = inputs.to_vec();
    for (which, tensor) in inputs.iter().enumerate() {
        for i in 0..tensor.numel() {
            let origin = tensor.data()[i];
            let plus = T::from_f64(origin.to_f64() + h);
            let minus = T::from_f64(origin.to_f64() - h);
            work[which].data_mut()[i] = plus;
            let f_plus = eval(model, &work);
            work[which].data_mut()[i] = minus;
            let f_minus = eval(model, &work);
            work[which].data_mut()[i] = origin;
            let numeric = (f_plus - f_minus) / (plus.to_f64() - minus.to_f64());
            report.observe(rel_err(input_grads[which][i], numeric), || {
                format!("input {which} element {i}")
            });
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Linear;
    use crate::rng::Rng;

    fn random_tensor(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
        let numel: usize = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..numel).map(|_| rng.range(-1.5, 1.5)).collect())
    }

    #[test]
    fn smooth_composite_passes_the_input_check() {
        let mut rng = Rng::new(1);
        let a = random_tensor(&mut rng, &[3, 4]);
        let b = random_tensor(&mut rng, &[4, 2]);
        let report = gradcheck_inputs(&[a, b], 1e-3, |g, ids| {
            let p = g.matmul(ids[0], ids[1]);
            let h = g.gelu(p);
            g.sum_all(h)
        });
        report.assert_below(1e-5);
        assert_eq!(report.checked, 20);
    }

    #[test]
    fn a_deliberately_wrong_backward_rule_is_caught() {
        let mut rng = Rng::new(2);
        let input = random_tensor(&mut rng, &[4]);
        let report = gradcheck_inputs(&[input], 1e-3, |g, ids| {
            let x = ids[0];
            let vx = g.value(x).clone();
            let data = vx.data().iter().map(|&v| v * v).collect();
            let value = Tensor::new(vx.shape().to_vec(), data);
            let wrong = g.push(
                value,
                true,
                Some(Box::new(move |dy: &[f64]| {
                    // claims d(x^2)/dx = 3x
                    vec![(x.0, dy.iter().zip(vx.data()).map(|(&g, &v)| g * 3.0 * v).collect())]
                })),
            );
            g.sum_all(wrong)
        });
        assert!(report.max_rel_err > 0.2, "wrong rule slipped through: {report:?}");
    }

    #[test]
    fn module_check_passes_and_restores_parameters_bitwise() {
        let mut rng = Rng::new(3);
        let mut layer = Linear::<f64>::new("lin", 3, 2, &mut rng);
        let mut before = Vec::new();
        layer.visit_tensors(&mut |_, _, t| before.extend(t.data().iter().map(|v| v.to_bits())));
        let x = random_tensor(&mut rng, &[4, 3]);
        let report = gradcheck_module(&mut layer, &[x], Mode::Train, 0, 1e-3, |m, s, ids| {
            let y = m.forward(s, ids[0]);
            let sq = s.graph.mul(y, y);
            s.graph.sum_all(sq)
        });
        report.assert_below(1e-5);
        let mut after = Vec::new();
        layer.visit_tensors(&mut |_, _, t| after.extend(t.data().iter().map(|v| v.to_bits())));
        assert_eq!(before, after, "parameters must be restored bitwise");
    }
}
