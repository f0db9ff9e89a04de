//! Differentiable tensor operations recorded on the graph.
//!
//! Each method appends one node with an eagerly computed value. Reductions
//! (sums, means, normalization statistics, losses) accumulate in f64 even
//! when the scalar type is f32, so 32-bit training keeps 64-bit sums. A
//! backward closure is recorded only when some input requires gradients.

use crate::graph::{BackwardFn, Graph, NodeId};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub(crate) fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

fn same_shape<T: Scalar>(op: &str, a: &Tensor<T>, b: &Tensor<T>) {
    assert_eq!(
        a.shape(),
        b.shape(),
        "{op}: shapes {} and {} do not match",
        a.shape_string(),
        b.shape_string()
    );
}

/// Flattened leading extent and trailing extent of the last axis.
fn row_split(op: &str, shape: &[usize]) -> (usize, usize) {
    assert!(!shape.is_empty(), "{op}: input needs at least one axis");
    let d = shape[shape.len() - 1];
    let rows: usize = shape[..shape.len() - 1].iter().product();
    (rows, d)
}

/// C = A * B with logical transposes realized through strides, so both
/// operands stay in their stored row-major layout with no copies.
fn gemm_block<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    trans_a: bool,
    b: &[T],
    trans_b: bool,
    out: &mut [T],
) {
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::ONE,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            T::ZERO,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn mm2<T: Scalar>(op: &str, a: &Tensor<T>, trans_a: bool, b: &Tensor<T>, trans_b: bool) -> Tensor<T> {
    assert_eq!(a.rank(), 2, "{op}: left operand must be rank 2, got {}", a.shape_string());
    assert_eq!(b.rank(), 2, "{op}: right operand must be rank 2, got {}", b.shape_string());
    let (m, k) = if trans_a { (a.shape()[1], a.shape()[0]) } else { (a.shape()[0], a.shape()[1]) };
    let (k2, n) = if trans_b { (b.shape()[1], b.shape()[0]) } else { (b.shape()[0], b.shape()[1]) };
    assert_eq!(
        k,
        k2,
        "{op}: inner dimensions of {} and {} do not match",
        a.shape_string(),
        b.shape_string()
    );
    let mut out = vec![T::ZERO; m * n];
    gemm_block(m, k, n, a.data(), trans_a, b.data(), trans_b, &mut out);
    Tensor::new(vec![m, n], out)
}

fn bmm3<T: Scalar>(op: &str, a: &Tensor<T>, trans_a: bool, b: &Tensor<T>, trans_b: bool) -> Tensor<T> {
    assert_eq!(a.rank(), 3, "{op}: left operand must be rank 3, got {}", a.shape_string());
    assert_eq!(b.rank(), 3, "{op}: right operand must be rank 3, got {}", b.shape_string());
    let batch = a.shape()[0];
    assert_eq!(
        batch,
        b.shape()[0],
        "{op}: batch sizes of {} and {} do not match",
        a.shape_string(),
        b.shape_string()
    );
    let (m, k) = if trans_a { (a.shape()[2], a.shape()[1]) } else { (a.shape()[1], a.shape()[2]) };
    let (k2, n) = if trans_b { (b.shape()[2], b.shape()[1]) } else { (b.shape()[1], b.shape()[2]) };
    assert_eq!(
        k,
        k2,
        "{op}: inner dimensions of {} and {} do not match",
        a.shape_string(),
        b.shape_string()
    );
    let a_step = a.shape()[1] * a.shape()[2];
    let b_step = b.shape()[1] * b.shape()[2];
    let mut out = vec![T::ZERO; batch * m * n];
    for g in 0..batch {
        gemm_block(
            m,
            k,
            n,
            &a.data()[g * a_step..(g + 1) * a_step],
            trans_a,
            &b.data()[g * b_step..(g + 1) * b_step],
            trans_b,
            &mut out[g * m * n..(g + 1) * m * n],
        );
    }
    Tensor::new(vec![batch, m, n], out)
}

fn swapped<T: Scalar>(t: &Tensor<T>, a: usize, b: usize) -> Tensor<T> {
    let shape = t.shape();
    let mut out_shape = shape.to_vec();
    out_shape.swap(a, b);
    let in_strides = strides_of(shape);
    let out_strides = strides_of(&out_shape);
    // Stride, in the output's flat space, of each input axis.
    let mut mapped = vec![0usize; shape.len()];
    for (i, slot) in mapped.iter_mut().enumerate() {
        let out_axis = if i == a {
            b
        } else if i == b {
            a
        } else {
            i
        };
        *slot = out_strides[out_axis];
    }
    let data = t.data();
    let mut out = data.to_vec();
    for (flat, &v) in data.iter().enumerate() {
        let mut rem = flat;
        let mut dst = 0usize;
        for i in 0..shape.len() {
            dst += (rem / in_strides[i]) * mapped[i];
            rem %= in_strides[i];
        }
        out[dst] = v;
    }
    Tensor::new(out_shape, out)
}

impl<T: Scalar> Graph<T> {
    fn unary(&mut self, x: NodeId, value: Tensor<T>, df: impl Fn(&[T]) -> Vec<T> + 'static) -> NodeId {
        let needs = self.any_needs_grad(&[x]);
        let backward = needs.then(move || -> BackwardFn<T> { Box::new(move |dy| vec![(x.0, df(dy))]) });
        self.push(value, needs, backward)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a).clone(), self.value(b).clone());
        same_shape("add", &va, &vb);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(va.shape().to_vec(), data);
        let needs = self.any_needs_grad(&[a, b]);
        let backward = needs
            .then(|| -> BackwardFn<T> { Box::new(move |dy| vec![(a.0, dy.to_vec()), (b.0, dy.to_vec())]) });
        self.push(value, needs, backward)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a).clone(), self.value(b).clone());
        same_shape("sub", &va, &vb);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x - y).collect();
        let value = Tensor::new(va.shape().to_vec(), data);
        let needs = self.any_needs_grad(&[a, b]);
        let backward = needs.then(|| -> BackwardFn<T> {
            Box::new(move |dy| {
                let db = dy.iter().map(|&g| T::ZERO - g).collect();
                vec![(a.0, dy.to_vec()), (b.0, db)]
            })
        });
        self.push(value, needs, backward)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a).clone(), self.value(b).clone());
        same_shape("mul", &va, &vb);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
        let value = Tensor::new(va.shape().to_vec(), data);
        let needs = self.any_needs_grad(&[a, b]);
        let backward = needs.then(|| -> BackwardFn<T> {
            Box::new(move |dy| {
                let da = dy.iter().zip(vb.data()).map(|(&g, &y)| g * y).collect();
                let db = dy.iter().zip(va.data()).map(|(&g, &x)| g * x).collect();
                vec![(a.0, da), (b.0, db)]
            })
        });
        self.push(value, needs, backward)
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        let c = T::from_f64(factor);
        let value = self.value(x).map(|v| v * c);
        self.unary(x, value, move |dy| dy.iter().map(|&g| g * c).collect())
    }

    /// x of shape [.., D] plus a bias of shape [D]; the bias gradient sums
    /// over all leading positions.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> NodeId {
        let (vx, vb) = (self.value(x).clone(), self.value(bias).clone());
        assert!(
            !vx.shape().is_empty()
                && vb.rank() == 1
                && vx.shape()[vx.rank() - 1] == vb.shape()[0],
            "add_bias: shapes {} and {} do not match on the last axis",
            vx.shape_string(),
            vb.shape_string()
        );
        let d = vb.numel();
        let data = vx.data().iter().enumerate().map(|(i, &v)| v + vb.data()[i % d]).collect();
        let value = Tensor::new(vx.shape().to_vec(), data);
        let needs = self.any_needs_grad(&[x, bias]);
        let backward = needs.then(|| -> BackwardFn<T> {
            Box::new(move |dy| {
                let mut db = vec![0.0f64; d];
                for (i, g) in dy.iter().enumerate() {
                    db[i % d] += g.to_f64();
                }
                vec![(x.0, dy.to_vec()), (bias.0, db.into_iter().map(T::from_f64).collect())]
            })
        });
        self.push(value, needs, backward)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let vx = self.value(x).clone();
        let value = vx.map(|v| if v > T::ZERO { v } else { T::ZERO });
        self.unary(x, value, move |dy| {
            dy.iter()
                .zip(vx.data())
                .map(|(&g, &v)| if v > T::ZERO { g } else { T::ZERO })
                .collect()
        })
    }

    /// Tanh-approximation GELU.
    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let vx = self.value(x).clone();
        let c = T::from_f64((2.0 / std::f64::consts::PI).sqrt());
        let a = T::from_f64(0.044715);
        let half = T::from_f64(0.5);
        let three = T::from_f64(3.0);
        let t: Vec<T> = vx.data().iter().map(|&v| (c * (v + a * v * v * v)).tanh()).collect();
        let data: Vec<T> =
            vx.data().iter().zip(&t).map(|(&v, &ti)| half * v * (T::ONE + ti)).collect();
        let value = Tensor::new(vx.shape().to_vec(), data);
        self.unary(x, value, move |dy| {
            dy.iter()
                .zip(vx.data().iter().zip(&t))
                .map(|(&g, (&v, &ti))| {
                    let sech2 = T::ONE - ti * ti;
                    let dinner = c * (T::ONE + three * a * v * v);
                    g * (half * (T::ONE + ti) + half * v * sech2 * dinner)
                })
                .collect()
        })
    }

    pub fn softmax_lastdim(&mut self, x: NodeId) -> NodeId {
        let vx = self.value(x).clone();
        let (rows, d) = row_split("softmax_lastdim", vx.shape());
        let mut out = vec![T::ZERO; vx.numel()];
        for r in 0..rows {
            let row = &vx.data()[r * d..(r + 1) * d];
            let m = row.iter().copied().fold(row[0], T::max_val);
            let e: Vec<T> = row.iter().map(|&v| (v - m).exp()).collect();
            let s: f64 = e.iter().map(|v| v.to_f64()).sum();
            for (slot, ei) in out[r * d..(r + 1) * d].iter_mut().zip(&e) {
                *slot = T::from_f64(ei.to_f64() / s);
            }
        }
        let y = Tensor::new(vx.shape().to_vec(), out);
        let yc = y.clone();
        self.unary(x, y, move |dy| {
            let mut dx = vec![T::ZERO; dy.len()];
            for r in 0..rows {
                let yr = &yc.data()[r * d..(r + 1) * d];
                let dyr = &dy[r * d..(r + 1) * d];
                let dot: f64 = yr.iter().zip(dyr).map(|(&yv, &gv)| yv.to_f64() * gv.to_f64()).sum();
                let dot_t = T::from_f64(dot);
                for i in 0..d {
                    dx[r * d + i] = yr[i] * (dyr[i] - dot_t);
                }
            }
            dx
        })
    }

    /// Normalizes over the last axis, then applies the affine pair.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> NodeId {
        let (vx, vg, vb) =
            (self.value(x).clone(), self.value(gamma).clone(), self.value(beta).clone());
        let (rows, d) = row_split("layer_norm", vx.shape());
        assert!(
            vg.rank() == 1 && vg.numel() == d && vb.rank() == 1 && vb.numel() == d,
            "layer_norm: affine shapes {} and {} do not match feature width {d} of {}",
            vg.shape_string(),
            vb.shape_string(),
            vx.shape_string()
        );
        let mut xhat = vec![T::ZERO; vx.numel()];
        let mut inv_sigma = vec![0.0f64; rows];
        let mut out = vec![T::ZERO; vx.numel()];
        for r in 0..rows {
            let row = &vx.data()[r * d..(r + 1) * d];
            let mean = row.iter().map(|v| v.to_f64()).sum::<f64>() / d as f64;
            let var = row
                .iter()
                .map(|v| {
                    let c = v.to_f64() - mean;
                    c * c
                })
                .sum::<f64>()
                / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_sigma[r] = inv;
            for i in 0..d {
                let h = T::from_f64((row[i].to_f64() - mean) * inv);
                xhat[r * d + i] = h;
                out[r * d + i] = vg.data()[i] * h + vb.data()[i];
            }
        }
        let value = Tensor::new(vx.shape().to_vec(), out);
        let needs = self.any_needs_grad(&[x, gamma, beta]);
        let backward = needs.then(|| -> BackwardFn<T> {
            Box::new(move |dy| {
                let mut dx = vec![T::ZERO; dy.len()];
                let mut dg = vec![0.0f64; d];
                let mut db = vec![0.0f64; d];
                for r in 0..rows {
                    let hr = &xhat[r * d..(r + 1) * d];
                    let dyr = &dy[r * d..(r + 1) * d];
                    let mut mean_g = 0.0f64;
                    let mut mean_gh = 0.0f64;
                    for i in 0..d {
                        let g = dyr[i].to_f64() * vg.data()[i].to_f64();
                        mean_g += g;
                        mean_gh += g * hr[i].to_f64();
                        dg[i] += dyr[i].to_f64() * hr[i].to_f64();
                        db[i] += dyr[i].to_f64();
                    }
                    mean_g /= d as f64;
                    mean_gh /= d as f64;
                    for i in 0..d {
                        let g = dyr[i].to_f64() * vg.data()[i].to_f64();
                        dx[r * d + i] =
                            T::from_f64((g - mean_g - hr[i].to_f64() * mean_gh) * inv_sigma[r]);
                    }
                }
                vec![
                    (x.0, dx),
                    (gamma.0, dg.into_iter().map(T::from_f64).collect()),
                    (beta.0, db.into_iter().map(T::from_f64).collect()),
                ]
            })
        });
        self.push(value, needs, backward)
    }

    /// Normalizes each last-axis channel over all leading positions using
    /// batch statistics, which are also returned so the caller can update
    /// running averages.
    pub fn batch_norm_train(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    ) -> (NodeId, Vec<f64>, Vec<f64>) {
        let (vx, vg, vb) =
            (self.value(x).clone(), self.value(gamma).clone(), self.value(beta).clone());
        let (rows, c) = row_split("batch_norm", vx.shape());
        assert!(
            vg.rank() == 1 && vg.numel() == c && vb.rank() == 1 && vb.numel() == c,
            "batch_norm: affine shapes {} and {} do not match channel width {c} of {}",
            vg.shape_string(),
            vb.shape_string(),
            vx.shape_string()
        );
        let mut mean = vec![0.0f64; c];
        for r in 0..rows {
            for j in 0..c {
                mean[j] += vx.data()[r * c + j].to_f64();
            }
        }
        for m in &mut mean {
            *m /= rows as f64;
        }
        let mut var = vec![0.0f64; c];
        for r in 0..rows {
            for j in 0..c {
                let d = vx.data()[r * c + j].to_f64() - mean[j];
                var[j] += d * d;
            }
        }
        for v in &mut var {
            *v /= rows as f64;
        }
        let inv: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![T::ZERO; vx.numel()];
        let mut out = vec![T::ZERO; vx.numel()];
        for r in 0..rows {
            for j in 0..c {
                let h = T::from_f64((vx.data()[r * c + j].to_f64() - mean[j]) * inv[j]);
                xhat[r * c + j] = h;
                out[r * c + j] = vg.data()[j] * h + vb.data()[j];
            }
        }
        let value = Tensor::new(vx.shape().to_vec(), out);
        let needs = self.any_needs_grad(&[x, gamma, beta]);
        let inv_captured = inv.clone();
        let backward = needs.then(|| -> BackwardFn<T> {
            Box::new(move |dy| {
                let mut sum_dy = vec![0.0f64; c];
                let mut sum_dyh = vec![0.0f64; c];
                for r in 0..rows {
                    for j in 0..c {
                        let g = dy[r * c + j].to_f64();
                        sum_dy[j] += g;
                        sum_dyh[j] += g * xhat[r * c + j].to_f64();
                    }
                }
                let mut dx = vec![T::ZERO; dy.len()];
                for r in 0..rows {
                    for j in 0..c {
                        let g = dy[r * c + j].to_f64();
                        let centered = g - sum_dy[j] / rows as f64
                            - xhat[r * c + j].to_f64() * sum_dyh[j] / rows as f64;
                        dx[r * c + j] =
                            T::from_f64(vg.data()[j].to_f64() * inv_captured[j] * centered);
                    }
                }
                vec![
                    (x.0, dx),
                    (gamma.0, sum_dyh.iter().map(|&v| T::from_f64(v)).collect()),
                    (beta.0, sum_dy.iter().map(|&v| T::from_f64(v)).collect()),
                ]
            })
        });
        let id = self.push(value, needs, backward);
        (id, mean, var)
    }

    /// Batch normalization against fixed running statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> NodeId {
        let (vx, vg, vb) =
            (self.value(x).clone(), self.value(gamma).clone(), self.value(beta).clone());
        let (rows, c) = row_split("batch_norm", vx.shape());
        assert!(
            vg.rank() == 1 && vg.numel() == c && vb.rank() == 1 && vb.numel() == c,
            "batch_norm: affine shapes {} and {} do not match channel width {c} of {}",
            vg.shape_string(),
            vb.shape_string(),
            vx.shape_string()
        );
        assert!(
            running_mean.len() == c && running_var.len() == c,
            "batch_norm: running statistics of lengths {} and {} do not match channel width {c}",
            running_mean.len(),
            running_var.len()
        );
        let inv: Vec<f64> = running_var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![T::ZERO; vx.numel()];
        let mut out = vec![T::ZERO; vx.numel()];
        for r in 0..rows {
            for j in 0..c {
                let h = T::from_f64((vx.data()[r * c + j].to_f64() - running_mean[j]) * inv[j]);
                xhat[r * c + j] = h;
                out[r * c + j] = vg.data()[j] * h + vb.data()[j];
            }
        }
        let value = Tensor::new(vx.shape().to_vec(), out);
        let needs = self.any_needs_grad(&[x, gamma, beta]);
        let backward = needs.then(|| -> BackwardFn<T> {
            Box::new(move |dy| {
                let mut dx = vec![T::ZERO; dy.len()];
                let mut dg = vec![0.0f64; c];
                let mut db = vec![0.0f64; c];
                for r in 0..rows {
                    for j in 0..c {
                        let g = dy[r * c + j].to_f64();
                        dx[r * c + j] = T::from_f64(g * vg.data()[j].to_f64() * inv[j]);
                        dg[j] += g * xhat[r * c + j].to_f64();
                        db[j] += g;
                    }
                }
                vec![
                    (x.0, dx),
                    (gamma.0, dg.into_iter().map(T::from_f64).collect()),
                    (beta.0, db.into_iter().map(T::from_f64).collect()),
                ]
            })
        });
        self.push(value, needs, backward)
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let vx = self.value(x).clone();
        let total: f64 = vx.data().iter().map(|v| v.to_f64()).sum();
        let n = vx.numel();
        self.unary(x, Tensor::scalar(T::from_f64(total)), move |dy| vec![dy[0]; n])
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let vx = self.value(x).clone();
        let n = vx.numel();
        let total: f64 = vx.data().iter().map(|v| v.to_f64()).sum();
        self.unary(x, Tensor::scalar(T::from_f64(total / n as f64)), move |dy| {
            let g = T::from_f64(dy[0].to_f64() / n as f64);
            vec![g; n]
        })
    }

    /// Maximum along one axis; ties keep the earliest index, and the
    /// gradient flows only to the winning positions.
    pub fn max_over_axis(&mut self, x: NodeId, axis: usize) -> NodeId {
        let vx = self.value(x).clone();
        assert!(axis < vx.rank(), "max_over_axis: axis {axis} out of range for {}", vx.shape_string());
        let shape = vx.shape().to_vec();
        let len = shape[axis];
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let mut out = vec![T::ZERO; outer * inner];
        let mut arg = vec![0usize; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let mut best = vx.data()[o * len * inner + i];
                let mut bj = 0usize;
                for j in 1..len {
                    let v = vx.data()[o * len * inner + j * inner + i];
                    if v > best {
                        best = v;
                        bj = j;
                    }
                }
                out[o * inner + i] = best;
                arg[o * inner + i] = bj;
            }
        }
        let n_in = vx.numel();
        self.unary(x, Tensor::new(out_shape, out), move |dy| {
            let mut dx = vec![T::ZERO; n_in];
            for o in 0..outer {
                for i in 0..inner {
                    let j = arg[o * inner + i];
                    dx[o * len * inner + j * inner + i] = dy[o * inner + i];
                }
            }
            dx
        })
    }

    pub fn mean_over_axis(&mut self, x: NodeId, axis: usize) -> NodeId {
        let vx = self.value(x).clone();
        assert!(axis < vx.rank(), "mean_over_axis: axis {axis} out of range for {}", vx.shape_string());
        let shape = vx.shape().to_vec();
        let len = shape[axis];
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let mut out = vec![T::ZERO; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let mut acc = 0.0f64;
                for j in 0..len {
                    acc += vx.data()[o * len * inner + j * inner + i].to_f64();
                }
                out[o * inner + i] = T::from_f64(acc / len as f64);
            }
        }
        let n_in = vx.numel();
        let recip = T::from_f64(1.0 / len as f64);
        self.unary(x, Tensor::new(out_shape, out), move |dy| {
            let mut dx = vec![T::ZERO; n_in];
            for o in 0..outer {
                for i in 0..inner {
                    let g = dy[o * inner + i] * recip;
                    for j in 0..len {
                        dx[o * len * inner + j * inner + i] = g;
                    }
                }
            }
            dx
        })
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> NodeId {
        let value = self.value(x).reshaped(shape.to_vec());
        self.unary(x, value, |dy| dy.to_vec())
    }

    pub fn swap_axes(&mut self, x: NodeId, a: usize, b: usize) -> NodeId {
        let vx = self.value(x).clone();
        assert!(
            a < vx.rank() && b < vx.rank(),
            "swap_axes: axes {a},{b} out of range for {}",
            vx.shape_string()
        );
        let value = swapped(&vx, a, b);
        let out_shape = value.shape().to_vec();
        self.unary(x, value, move |dy| {
            let g = Tensor::new(out_shape.clone(), dy.to_vec());
            swapped(&g, a, b).data().to_vec()
        })
    }

    pub fn concat(&mut self, axis: usize, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat: needs at least one part");
        let tensors: Vec<Tensor<T>> = parts.iter().map(|&p| self.value(p).clone()).collect();
        let rank = tensors[0].rank();
        assert!(axis < rank, "concat: axis {axis} out of range for {}", tensors[0].shape_string());
        for t in &tensors[1..] {
            let compatible = t.rank() == rank
                && (0..rank).all(|i| i == axis || t.shape()[i] == tensors[0].shape()[i]);
            assert!(
                compatible,
                "concat: shapes {} and {} differ off the joined axis",
                tensors[0].shape_string(),
                t.shape_string()
            );
        }
        let outer: usize = tensors[0].shape()[..axis].iter().product();
        let inner: usize = tensors[0].shape()[axis + 1..].iter().product();
        let lens: Vec<usize> = tensors.iter().map(|t| t.shape()[axis]).collect();
        let total: usize = lens.iter().sum();
        let mut out_shape = tensors[0].shape().to_vec();
        out_shape[axis] = total;
        let mut out = vec![T::ZERO; outer * total * inner];
        let mut offset = 0usize;
        for (t, &l) in tensors.iter().zip(&lens) {
            for o in 0..outer {
                let dst = o * total * inner + offset * inner;
                out[dst..dst + l * inner].copy_from_slice(&t.data()[o * l * inner..(o + 1) * l * inner]);
            }
            offset += l;
        }
        let value = Tensor::new(out_shape, out);
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let needs = self.any_needs_grad(parts);
        let backward = needs.then(|| -> BackwardFn<T> {
            Box::new(move |dy| {
                let mut grads = Vec::with_capacity(ids.len());
                let mut offset = 0usize;
                for (&id, &l) in ids.iter().zip(&lens) {
                    let mut g = vec![T::ZERO; outer * l * inner];
                    for o in 0..outer {
                        let src = o * total * inner + offset * inner;
                        g[o * l * inner..(o + 1) * l * inner]
                            .copy_from_slice(&dy[src..src + l * inner]);
                    }
                    grads.push((id, g));
                    offset += l;
                }
                grads
            })
        });
        self.push(value, needs, backward)
    }

    /// Gathers slices along one axis; repeated indices accumulate their
    /// gradients on the shared source slice.
    pub fn index_select(&mut self, x: NodeId, axis: usize, indices: &[usize]) -> NodeId {
        let vx = self.value(x).clone();
        assert!(axis < vx.rank(), "index_select: axis {axis} out of range for {}", vx.shape_string());
        assert!(!indices.is_empty(), "index_select: needs at least one index");
        let dim = vx.shape()[axis];
        for &ix in indices {
            assert!(ix < dim, "index_select: index {ix} out of range for axis length {dim}");
        }
        let outer: usize = vx.shape()[..axis].iter().product();
        let inner: usize = vx.shape()[axis + 1..].iter().product();
        let p = indices.len();
        let mut out_shape = vx.shape().to_vec();
        out_shape[axis] = p;
        let mut out = vec![T::ZERO; outer * p * inner];
        for o in 0..outer {
            for (pos, &ix) in indices.iter().enumerate() {
                let dst = o * p * inner + pos * inner;
                let src = o * dim * inner + ix * inner;
                out[dst..dst + inner].copy_from_slice(&vx.data()[src..src + inner]);
            }
        }
        let picked = indices.to_vec();
        let n_in = vx.numel();
        self.unary(x, Tensor::new(out_shape, out), move |dy| {
            let mut dx = vec![T::ZERO; n_in];
            for o in 0..outer {
                for (pos, &ix) in picked.iter().enumerate() {
                    let src = o * p * inner + pos * inner;
                    let dst = o * dim * inner + ix * inner;
                    for t in 0..inner {
                        dx[dst + t] += dy[src + t];
                    }
                }
            }
            dx
        })
    }

    /// Contiguous window along one axis.
    pub fn narrow(&mut self, x: NodeId, axis: usize, start: usize, len: usize) -> NodeId {
        let vx_shape = self.value(x).shape().to_vec();
        assert!(axis < vx_shape.len(), "narrow: axis {axis} out of range");
        let dim = vx_shape[axis];
        assert!(
            len >= 1 && start + len <= dim,
            "narrow: window {start}..{} exceeds axis length {dim}",
            start + len
        );
        let indices: Vec<usize> = (start..start + len).collect();
        self.index_select(x, axis, &indices)
    }

    /// x of shape [B, N, C] with one index list per batch entry; returns
    /// [B, P, C] where row p of entry b is x[b, indices[b][p], :].
    pub fn gather_per_batch(&mut self, x: NodeId, indices: &[Vec<usize>]) -> NodeId {
        let vx = self.value(x).clone();
        assert_eq!(vx.rank(), 3, "gather_per_batch: input must be rank 3, got {}", vx.shape_string());
        let (bsz, n, c) = (vx.shape()[0], vx.shape()[1], vx.shape()[2]);
        assert_eq!(indices.len(), bsz, "gather_per_batch: {} index lists for batch {bsz}", indices.len());
        let p = indices[0].len();
        assert!(p >= 1, "gather_per_batch: needs at least one index per entry");
        for list in indices {
            assert_eq!(list.len(), p, "gather_per_batch: ragged index lists");
            for &ix in list {
                assert!(ix < n, "gather_per_batch: index {ix} out of range for {n} rows");
            }
        }
        let mut out = vec![T::ZERO; bsz * p * c];
        for (b, list) in indices.iter().enumerate() {
            for (q, &ix) in list.iter().enumerate() {
                let dst = (b * p + q) * c;
                let src = (b * n + ix) * c;
                out[dst..dst + c].copy_from_slice(&vx.data()[src..src + c]);
            }
        }
        let picked: Vec<Vec<usize>> = indices.to_vec();
        let n_in = vx.numel();
        self.unary(x, Tensor::new(vec![bsz, p, c], out), move |dy| {
            let mut dx = vec![T::ZERO; n_in];
            for (b, list) in picked.iter().enumerate() {
                for (q, &ix) in list.iter().enumerate() {
                    let src = (b * p + q) * c;
                    let dst = (b * n + ix) * c;
                    for t in 0..c {
                        dx[dst + t] += dy[src + t];
                    }
                }
            }
            dx
        })
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a).clone(), self.value(b).clone());
        let value = mm2("matmul", &va, false, &vb, false);
        let out_shape = value.shape().to_vec();
        let needs = self.any_needs_grad(&[a, b]);
        let backward = needs.then(|| -> BackwardFn<T> {
            Box::new(move |dy| {
                let dc = Tensor::new(out_shape.clone(), dy.to_vec());
                let da = mm2("matmul", &dc, false, &vb, true);
                let db = mm2("matmul", &va, true, &dc, false);
                vec![(a.0, da.data().to_vec()), (b.0, db.data().to_vec())]
            })
        });
        self.push(value, needs, backward)
    }

    /// Batched matrix product over [B, ., .] operands with optional logical
    /// transposition of either side.
    pub fn bmm(&mut self, a: NodeId, b: NodeId, trans_a: bool, trans_b: bool) -> NodeId {
        let (va, vb) = (self.value(a).clone(), self.value(b).clone());
        let value = bmm3("bmm", &va, trans_a, &vb, trans_b);
        let out_shape = value.shape().to_vec();
        let needs = self.any_needs_grad(&[a, b]);
        let backward = needs.then(|| -> BackwardFn<T> {
            Box::new(move |dy| {
                let dc = Tensor::new(out_shape.clone(), dy.to_vec());
                let (da, db) = match (trans_a, trans_b) {
                    (false, false) => (
                        bmm3("bmm", &dc, false, &vb, true),
                        bmm3("bmm", &va, true, &dc, false),
                    ),
                    (false, true) => (
                        bmm3("bmm", &dc, false, &vb, false),
                        bmm3("bmm", &dc, true, &va, false),
                    ),
                    (true, false) => (
                        bmm3("bmm", &vb, false, &dc, true),
                        bmm3("bmm", &va, false, &dc, false),
                    ),
                    (true, true) => (
                        bmm3("bmm", &vb, true, &dc, true),
                        bmm3("bmm", &dc, true, &va, true),
                    ),
                };
                vec![(a.0, da.data().to_vec()), (b.0, db.data().to_vec())]
            })
        });
        self.push(value, needs, backward)
    }

    /// Mean over groups of the bidirectional sum of nearest-neighbor squared
    /// distances between prediction group g and target group g. The target
    /// is plain data; gradients flow only through the prediction, via the
    /// recorded nearest-pair assignments.
    pub fn chamfer_batch(&mut self, pred: NodeId, target: &Tensor<T>) -> NodeId {
        let vp = self.value(pred).clone();
        assert!(
            vp.rank() == 3 && vp.shape()[2] == 3,
            "chamfer: prediction must be GxKx3, got {}",
            vp.shape_string()
        );
        assert!(
            target.rank() == 3 && target.shape()[2] == 3,
            "chamfer: target must be GxK'x3, got {}",
            target.shape_string()
        );
        assert_eq!(
            vp.shape()[0],
            target.shape()[0],
            "chamfer: group counts of {} and {} do not match",
            vp.shape_string(),
            target.shape_string()
        );
        let groups = vp.shape()[0];
        let kp = vp.shape()[1];
        let kt = target.shape()[1];
        let pd = vp.to_f64_vec();
        let td = target.to_f64_vec();
        let d2 = |p: &[f64], t: &[f64]| {
            (p[0] - t[0]) * (p[0] - t[0])
                + (p[1] - t[1]) * (p[1] - t[1])
                + (p[2] - t[2]) * (p[2] - t[2])
        };
        let mut total = 0.0f64;
        let mut near_t = vec![0usize; groups * kp];
        let mut near_p = vec![0usize; groups * kt];
        for g in 0..groups {
            for i in 0..kp {
                let p = &pd[(g * kp + i) * 3..(g * kp + i) * 3 + 3];
                let mut best = f64::INFINITY;
                let mut bj = 0usize;
                for j in 0..kt {
                    let dist = d2(p, &td[(g * kt + j) * 3..(g * kt + j) * 3 + 3]);
                    if dist < best {
                        best = dist;
                        bj = j;
                    }
                }
                near_t[g * kp + i] = bj;
                total += best;
            }
            for j in 0..kt {
                let t = &td[(g * kt + j) * 3..(g * kt + j) * 3 + 3];
                let mut best = f64::INFINITY;
                let mut bi = 0usize;
                for i in 0..kp {
                    let dist = d2(&pd[(g * kp + i) * 3..(g * kp + i) * 3 + 3], t);
                    if dist < best {
                        best = dist;
                        bi = i;
                    }
                }
                near_p[g * kt + j] = bi;
                total += best;
            }
        }
        let loss = total / groups as f64;
        self.unary(pred, Tensor::scalar(T::from_f64(loss)), move |dy| {
            let scale = dy[0].to_f64() / groups as f64;
            let mut dx = vec![0.0f64; groups * kp * 3];
            for g in 0..groups {
                for i in 0..kp {
                    let j = near_t[g * kp + i];
                    for c in 0..3 {
                        dx[(g * kp + i) * 3 + c] +=
                            2.0 * (pd[(g * kp + i) * 3 + c] - td[(g * kt + j) * 3 + c]) * scale;
                    }
                }
                for j in 0..kt {
                    let i = near_p[g * kt + j];
                    for c in 0..3 {
                        dx[(g * kp + i) * 3 + c] +=
                            2.0 * (pd[(g * kp + i) * 3 + c] - td[(g * kt + j) * 3 + c]) * scale;
                    }
                }
            }
            dx.into_iter().map(T::from_f64).collect()
        })
    }

    /// Mean cross-entropy between logit rows and integer labels, evaluated
    /// through a log-sum-exp in f64.
    pub fn cross_entropy_mean(&mut self, logits: NodeId, labels: &[usize]) -> NodeId {
        let vl = self.value(logits).clone();
        assert_eq!(vl.rank(), 2, "cross_entropy: logits must be rank 2, got {}", vl.shape_string());
        let (bsz, c) = (vl.shape()[0], vl.shape()[1]);
        assert_eq!(labels.len(), bsz, "cross_entropy: {} labels for batch {bsz}", labels.len());
        for &l in labels {
            assert!(l < c, "cross_entropy: label {l} out of range for {c} classes");
        }
        let ld = vl.to_f64_vec();
        let mut total = 0.0f64;
        let mut probs = vec![0.0f64; bsz * c];
        for r in 0..bsz {
            let row = &ld[r * c..(r + 1) * c];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0f64;
            for j in 0..c {
                probs[r * c + j] = (row[j] - m).exp();
                s += probs[r * c + j];
            }
            for j in 0..c {
                probs[r * c + j] /= s;
            }
            total += s.ln() + m - row[labels[r]];
        }
        let loss = total / bsz as f64;
        let picked = labels.to_vec();
        self.unary(logits, Tensor::scalar(T::from_f64(loss)), move |dy| {
            let scale = dy[0].to_f64() / bsz as f64;
            let mut dx = vec![T::ZERO; bsz * c];
            for r in 0..bsz {
                for j in 0..c {
                    let onehot = if j == picked[r] { 1.0 } else { 0.0 };
                    dx[r * c + j] = T::from_f64((probs[r * c + j] - onehot) * scale);
                }
            }
            dx
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_tensor(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
        let numel: usize = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..numel).map(|_| rng.range(-2.0, 2.0)).collect())
    }

    #[test]
    fn matmul_of_ones_fills_with_inner_dimension() {
        let mut g: Graph<f64> = Graph::new();
        let a = g.constant(Tensor::full(&[2, 3], 1.0));
        let b = g.constant(Tensor::full(&[3, 2], 1.0));
        let c = g.matmul(a, b);
        assert_eq!(g.value(c).shape(), &[2, 2]);
        assert!(g.value(c).data().iter().all(|&v| v == 3.0));
    }

    #[test]
    #[should_panic(expected = "inner dimensions of 2x3 and 2x2")]
    fn matmul_rejects_mismatched_inner_dimensions() {
        let mut g: Graph<f64> = Graph::new();
        let a = g.constant(Tensor::full(&[2, 3], 1.0));
        let b = g.constant(Tensor::full(&[2, 2], 1.0));
        g.matmul(a, b);
    }

    #[test]
    #[should_panic(expected = "shapes 2x3 and 3x2 do not match")]
    fn add_rejects_mismatched_shapes() {
        let mut g: Graph<f64> = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[3, 2]));
        g.add(a, b);
    }

    #[test]
    fn relu_clamps_negatives_and_gates_the_gradient() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.leaf(Tensor::new(vec![4], vec![-1.5, 0.0, 0.5, 2.0]), true);
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 0.5, 2.0]);
        let loss = g.sum_all(y);
        g.backward(loss);
        assert_eq!(g.grad(x).unwrap().data(), &[0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn gelu_limits_and_reference_point() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.constant(Tensor::new(vec![4], vec![0.0, 1.0, 10.0, -10.0]));
        let y = g.gelu(x);
        let v = g.value(y).data();
        assert_eq!(v[0], 0.0);
        assert!((v[1] - 0.841192).abs() < 1e-5);
        assert!((v[2] - 10.0).abs() < 1e-4);
        assert!(v[3].abs() < 1e-4);
    }

    #[test]
    fn softmax_of_single_element_is_exactly_one() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.constant(Tensor::new(vec![1, 1], vec![4.7]));
        let y = g.softmax_lastdim(x);
        assert_eq!(g.value(y).data(), &[1.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_shift_cancels() {
        let mut rng = Rng::new(11);
        let mut g: Graph<f64> = Graph::new();
        let x = random_tensor(&mut rng, &[8, 8]);
        let shifted = x.map(|v| v + 100.0);
        let a = g.constant(x);
        let b = g.constant(shifted);
        let ya = g.softmax_lastdim(a);
        let yb = g.softmax_lastdim(b);
        for r in 0..8 {
            let row = &g.value(ya).data()[r * 8..(r + 1) * 8];
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
        for (va, vb) in g.value(ya).data().iter().zip(g.value(yb).data()) {
            assert!((va - vb).abs() < 1e-9);
        }
    }

    #[test]
    fn layer_norm_standardizes_rows_before_the_affine() {
        let mut rng = Rng::new(3);
        let mut g: Graph<f64> = Graph::new();
        let x = g.constant(random_tensor(&mut rng, &[5, 16]));
        let gamma = g.constant(Tensor::full(&[16], 1.0));
        let beta = g.constant(Tensor::zeros(&[16]));
        let y = g.layer_norm(x, gamma, beta, 1e-5);
        for r in 0..5 {
            let row = &g.value(y).data()[r * 16..(r + 1) * 16];
            let mean: f64 = row.iter().sum::<f64>() / 16.0;
            let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-9, "row mean {mean}");
            assert!((var - 1.0).abs() < 1e-4, "row var {var}");
        }
    }

    #[test]
    fn layer_norm_applies_the_affine_pair() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.constant(Tensor::new(vec![1, 2], vec![0.0, 2.0]));
        let gamma = g.constant(Tensor::full(&[2], 2.0));
        let beta = g.constant(Tensor::full(&[2], 3.0));
        let y = g.layer_norm(x, gamma, beta, 0.0);
        // Standardized row is (-1, 1); the affine maps it to (1, 5).
        let v = g.value(y).data();
        assert!((v[0] - 1.0).abs() < 1e-9);
        assert!((v[1] - 5.0).abs() < 1e-9);
    }

    #[test]
    fn batch_norm_train_standardizes_channels_and_reports_stats() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.constant(Tensor::new(vec![4, 2], vec![1.0, 10.0, 2.0, 20.0, 3.0, 30.0, 4.0, 40.0]));
        let gamma = g.constant(Tensor::full(&[2], 1.0));
        let beta = g.constant(Tensor::zeros(&[2]));
        let (y, mean, var) = g.batch_norm_train(x, gamma, beta, 0.0);
        assert!((mean[0] - 2.5).abs() < 1e-12);
        assert!((mean[1] - 25.0).abs() < 1e-12);
        assert!((var[0] - 1.25).abs() < 1e-12);
        assert!((var[1] - 125.0).abs() < 1e-12);
        for j in 0..2 {
            let col: Vec<f64> = (0..4).map(|r| g.value(y).data()[r * 2 + j]).collect();
            let m: f64 = col.iter().sum::<f64>() / 4.0;
            let v: f64 = col.iter().map(|c| (c - m) * (c - m)).sum::<f64>() / 4.0;
            assert!(m.abs() < 1e-9);
            assert!((v - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn batch_norm_eval_uses_the_provided_statistics() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.constant(Tensor::new(vec![2, 1], vec![5.0, 9.0]));
        let gamma = g.constant(Tensor::full(&[1], 2.0));
        let beta = g.constant(Tensor::full(&[1], 1.0));
        let y = g.batch_norm_eval(x, gamma, beta, &[5.0], &[4.0], 0.0);
        let v = g.value(y).data();
        assert!((v[0] - 1.0).abs() < 1e-12, "(5-5)/2*2+1");
        assert!((v[1] - 5.0).abs() < 1e-12, "(9-5)/2*2+1");
    }

    #[test]
    fn scale_multiplies_values_and_gradient() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.leaf(Tensor::new(vec![2], vec![1.0, -4.0]), true);
        let y = g.scale(x, 0.25);
        assert_eq!(g.value(y).data(), &[0.25, -1.0]);
        let loss = g.sum_all(y);
        g.backward(loss);
        assert_eq!(g.grad(x).unwrap().data(), &[0.25, 0.25]);
    }

    #[test]
    fn add_bias_broadcasts_and_sums_bias_gradient_over_rows() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.leaf(Tensor::zeros(&[3, 2]), true);
        let b = g.leaf(Tensor::new(vec![2], vec![1.0, -1.0]), true);
        let y = g.add_bias(x, b);
        assert_eq!(g.value(y).data(), &[1.0, -1.0, 1.0, -1.0, 1.0, -1.0]);
        let loss = g.sum_all(y);
        g.backward(loss);
        assert_eq!(g.grad(b).unwrap().data(), &[3.0, 3.0]);
        assert!(g.grad(x).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn mean_and_sum_match_hand_values() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.leaf(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 6.0]), true);
        let s = g.sum_all(x);
        let m = g.mean_all(x);
        assert_eq!(g.value(s).data(), &[12.0]);
        assert_eq!(g.value(m).data(), &[3.0]);
        g.backward(m);
        assert!(g.grad(x).unwrap().data().iter().all(|&v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn max_over_axis_keeps_first_of_tied_maxima() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.leaf(Tensor::new(vec![2, 3], vec![1.0, 5.0, 5.0, 4.0, 2.0, 0.0]), true);
        let y = g.max_over_axis(x, 1);
        assert_eq!(g.value(y).shape(), &[2]);
        assert_eq!(g.value(y).data(), &[5.0, 4.0]);
        let loss = g.sum_all(y);
        g.backward(loss);
        // The tie in row 0 resolves to column 1, the earliest maximum.
        assert_eq!(g.grad(x).unwrap().data(), &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn mean_over_axis_averages_and_spreads_gradient() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.leaf(Tensor::new(vec![2, 2], vec![1.0, 3.0, 5.0, 7.0]), true);
        let y = g.mean_over_axis(x, 0);
        assert_eq!(g.value(y).data(), &[3.0, 5.0]);
        let loss = g.sum_all(y);
        g.backward(loss);
        assert!(g.grad(x).unwrap().data().iter().all(|&v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn concat_then_narrow_round_trips() {
        let mut g: Graph<f64> = Graph::new();
        let a = g.constant(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let b = g.constant(Tensor::new(vec![2, 1], vec![9.0, 8.0]));
        let joined = g.concat(1, &[a, b]);
        assert_eq!(g.value(joined).shape(), &[2, 3]);
        assert_eq!(g.value(joined).data(), &[1.0, 2.0, 9.0, 3.0, 4.0, 8.0]);
        let left = g.narrow(joined, 1, 0, 2);
        let right = g.narrow(joined, 1, 2, 1);
        assert_eq!(g.value(left).data(), g.value(a).data());
        assert_eq!(g.value(right).data(), g.value(b).data());
    }

    #[test]
    fn index_select_accumulates_gradients_on_repeated_indices() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.leaf(Tensor::new(vec![3], vec![10.0, 20.0, 30.0]), true);
        let y = g.index_select(x, 0, &[0, 0, 2]);
        assert_eq!(g.value(y).data(), &[10.0, 10.0, 30.0]);
        let loss = g.sum_all(y);
        g.backward(loss);
        assert_eq!(g.grad(x).unwrap().data(), &[2.0, 0.0, 1.0]);
    }

    #[test]
    fn gather_per_batch_selects_rows_and_scatters_gradient() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.leaf(
            Tensor::new(vec![2, 3, 2], (0..12).map(|v| v as f64).collect()),
            true,
        );
        let y = g.gather_per_batch(x, &[vec![2, 0], vec![1, 1]]);
        assert_eq!(g.value(y).shape(), &[2, 2, 2]);
        assert_eq!(g.value(y).data(), &[4.0, 5.0, 0.0, 1.0, 8.0, 9.0, 8.0, 9.0]);
        let loss = g.sum_all(y);
        g.backward(loss);
        assert_eq!(
            g.grad(x).unwrap().data(),
            &[1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 2.0, 2.0, 0.0, 0.0]
        );
    }

    #[test]
    fn swap_axes_transposes_and_is_an_involution() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.constant(Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let t = g.swap_axes(x, 0, 1);
        assert_eq!(g.value(t).shape(), &[3, 2]);
        assert_eq!(g.value(t).data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);

        let mut rng = Rng::new(5);
        let v = random_tensor(&mut rng, &[2, 3, 4]);
        let y = g.constant(v.clone());
        let s1 = g.swap_axes(y, 1, 2);
        let s2 = g.swap_axes(s1, 1, 2);
        assert_eq!(g.value(s2).data(), v.data());
    }

    #[test]
    fn reshape_preserves_data_and_passes_gradient_through() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.leaf(Tensor::new(vec![2, 3], (1..=6).map(|v| v as f64).collect()), true);
        let y = g.reshape(x, &[3, 2]);
        assert_eq!(g.value(y).shape(), &[3, 2]);
        assert_eq!(g.value(y).data(), g.value(x).data());
        let loss = g.sum_all(y);
        g.backward(loss);
        assert!(g.grad(x).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn bmm_matches_naive_loops_for_all_transpose_pairs() {
        let mut rng = Rng::new(21);
        for &(ta, tb) in &[(false, false), (false, true), (true, false), (true, true)] {
            let (m, k, n, batch) = (3, 4, 2, 2);
            let a_shape = if ta { [batch, k, m] } else { [batch, m, k] };
            let b_shape = if tb { [batch, n, k] } else { [batch, k, n] };
            let a = random_tensor(&mut rng, &a_shape);
            let b = random_tensor(&mut rng, &b_shape);
            let mut want = vec![0.0f64; batch * m * n];
            for g in 0..batch {
                for i in 0..m {
                    for j in 0..n {
                        let mut acc = 0.0;
                        for l in 0..k {
                            let av = if ta {
                                a.data()[g * k * m + l * m + i]
                            } else {
                                a.data()[g * m * k + i * k + l]
                            };
                            let bv = if tb {
                                b.data()[g * n * k + j * k + l]
                            } else {
                                b.data()[g * k * n + l * n + j]
                            };
                            acc += av * bv;
                        }
                        want[g * m * n + i * n + j] = acc;
                    }
                }
            }
            let mut graph: Graph<f64> = Graph::new();
            let an = graph.constant(a);
            let bn = graph.constant(b);
            let cn = graph.bmm(an, bn, ta, tb);
            assert_eq!(graph.value(cn).shape(), &[batch, m, n]);
            for (got, want) in graph.value(cn).data().iter().zip(&want) {
                assert!((got - want).abs() < 1e-12, "ta={ta} tb={tb}");
            }
        }
    }

    #[test]
    fn chamfer_of_identical_sets_is_exactly_zero() {
        let mut g: Graph<f64> = Graph::new();
        let pts = Tensor::new(vec![1, 3, 3], vec![0.1, 0.2, 0.3, -1.0, 0.5, 2.0, 0.0, 0.0, 1.0]);
        let pred = g.constant(pts.clone());
        let loss = g.chamfer_batch(pred, &pts);
        assert_eq!(g.value(loss).data(), &[0.0]);
    }

    #[test]
    fn chamfer_of_unit_offset_singletons_is_two() {
        let mut g: Graph<f64> = Graph::new();
        let pred = g.constant(Tensor::new(vec![1, 1, 3], vec![1.0, 0.0, 0.0]));
        let target = Tensor::new(vec![1, 1, 3], vec![0.0, 0.0, 0.0]);
        let loss = g.chamfer_batch(pred, &target);
        assert_eq!(g.value(loss).data(), &[2.0]);
    }

    #[test]
    fn chamfer_is_symmetric_in_its_arguments() {
        let mut rng = Rng::new(8);
        let a = random_tensor(&mut rng, &[2, 5, 3]);
        let b = random_tensor(&mut rng, &[2, 7, 3]);
        let mut g: Graph<f64> = Graph::new();
        let an = g.constant(a.clone());
        let bn = g.constant(b.clone());
        let ab = g.chamfer_batch(an, &b);
        let ba = g.chamfer_batch(bn, &a);
        assert!((g.value(ab).data()[0] - g.value(ba).data()[0]).abs() < 1e-12);
    }

    #[test]
    fn chamfer_survives_a_common_rotation() {
        let mut rng = Rng::new(9);
        let a = random_tensor(&mut rng, &[1, 6, 3]);
        let b = random_tensor(&mut rng, &[1, 4, 3]);
        let (s, c) = (0.7f64.sin(), 0.7f64.cos());
        let rot = |t: &Tensor<f64>| {
            let mut out = t.data().to_vec();
            for p in out.chunks_mut(3) {
                let (x, y) = (p[0], p[1]);
                p[0] = c * x - s * y;
                p[1] = s * x + c * y;
            }
            Tensor::new(t.shape().to_vec(), out)
        };
        let mut g: Graph<f64> = Graph::new();
        let plain = g.constant(a.clone());
        let spun = g.constant(rot(&a));
        let l0 = g.chamfer_batch(plain, &b);
        let l1 = g.chamfer_batch(spun, &rot(&b));
        assert!((g.value(l0).data()[0] - g.value(l1).data()[0]).abs() < 1e-9);
    }

    #[test]
    fn chamfer_gradient_pulls_prediction_toward_target() {
        let mut g: Graph<f64> = Graph::new();
        let pred = g.leaf(Tensor::new(vec![1, 1, 3], vec![1.0, 2.0, 0.0]), true);
        let target = Tensor::new(vec![1, 1, 3], vec![0.0, 0.0, 0.0]);
        let loss = g.chamfer_batch(pred, &target);
        g.backward(loss);
        // Both directions select the same pair, so the gradient is 4(p - t).
        assert_eq!(g.grad(pred).unwrap().data(), &[4.0, 8.0, 0.0]);
    }

    #[test]
    fn cross_entropy_of_uniform_logits_is_log_class_count() {
        let mut g: Graph<f64> = Graph::new();
        let logits = g.leaf(Tensor::zeros(&[3, 4]), true);
        let loss = g.cross_entropy_mean(logits, &[0, 1, 3]);
        assert!((g.value(loss).data()[0] - 4.0f64.ln()).abs() < 1e-12);
        g.backward(loss);
        for r in 0..3 {
            let row = &g.grad(logits).unwrap().data()[r * 4..(r + 1) * 4];
            let sum: f64 = row.iter().sum();
            assert!(sum.abs() < 1e-12, "gradient row should sum to zero");
        }
    }
}
