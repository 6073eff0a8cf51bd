//! Checked building blocks on top of [`Graph`].

use std::rc::Rc;

use rand::Rng;

use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamSet};
use crate::tensor::Tensor;
use crate::NnError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn apply(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Relu => g.relu(x),
            Activation::Sigmoid => g.sigmoid(x),
            Activation::Tanh => g.tanh(x),
        }
    }
}

/// Fully connected layer `act(x W + b)`.
#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        input_dim: usize,
        output_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let weight = params.add(
            format!("{name}.weight"),
            Tensor::uniform_fan_in(&[input_dim, output_dim], input_dim, rng),
        );
        let bias = params.add(format!("{name}.bias"), Tensor::zeros(&[output_dim]));
        Self {
            weight,
            bias,
            input_dim,
            output_dim,
            activation,
        }
    }

    /// Same layer but with all weights and biases set to zero.
    pub fn zeroed(
        params: &mut ParamSet,
        name: &str,
        input_dim: usize,
        output_dim: usize,
        activation: Activation,
    ) -> Self {
        let weight = params.add(format!("{name}.weight"), Tensor::zeros(&[input_dim, output_dim]));
        let bias = params.add(format!("{name}.bias"), Tensor::zeros(&[output_dim]));
        Self {
            weight,
            bias,
            input_dim,
            output_dim,
            activation,
        }
    }

    pub fn forward(&self, g: &mut Graph, params: &ParamSet, x: Var) -> Result<Var, NnError> {
        let s = g.shape(x);
        if s.len() != 2 || s[1] != self.input_dim {
            return Err(NnError::ShapeMismatch {
                op: "dense",
                left: s.to_vec(),
                right: vec![self.input_dim, self.output_dim],
            });
        }
        let w = g.param(params, self.weight);
        let b = g.param(params, self.bias);
        Ok(dense(g, w, b, x, self.activation))
    }
}

/// Stack of dense layers; hidden layers use `hidden`, the last uses `output`.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Self {
        assert!(dims.len() >= 2, "an mlp needs input and output dims");
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last { output } else { hidden };
                Dense::new(params, &format!("{name}.{i}"), w[0], w[1], act, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn output_layer(&self) -> &Dense {
        self.layers.last().expect("non-empty")
    }

    pub fn forward(&self, g: &mut Graph, params: &ParamSet, mut x: Var) -> Result<Var, NnError> {
        for layer in &self.layers {
            x = layer.forward(g, params, x)?;
        }
        Ok(x)
    }
}

/// `act(x W + b)` on graph nodes.
pub fn dense(g: &mut Graph, weight: Var, bias: Var, x: Var, act: Activation) -> Var {
    let z = g.matmul(x, weight);
    let z = g.add_row(z, bias);
    act.apply(g, z)
}

/// Softmax over the last axis with an optional keep-mask.
pub fn softmax(g: &mut Graph, logits: Var, mask: Option<&[bool]>) -> Result<Var, NnError> {
    let t = g.value(logits);
    let mask: Option<Rc<[bool]>> = match mask {
        None => None,
        Some(m) => {
            if m.len() != t.len() {
                return Err(NnError::ShapeMismatch {
                    op: "softmax mask",
                    left: t.shape().to_vec(),
                    right: vec![m.len()],
                });
            }
            let n = t.cols();
            if m.chunks(n).any(|row| !row.iter().any(|&ok| ok)) {
                return Err(NnError::AllMasked);
            }
            Some(m.into())
        }
    };
    Ok(g.softmax(logits, mask))
}

/// Scaled dot-product attention `softmax(Q Kᵀ / sqrt(d)) V` over `[B, T, d]`
/// batches. Returns `(output, weights)`.
pub fn attention(g: &mut Graph, q: Var, k: Var, v: Var) -> Result<(Var, Var), NnError> {
    let (sq, sk, sv) = (g.shape(q).to_vec(), g.shape(k).to_vec(), g.shape(v).to_vec());
    let ok = sq.len() == 3
        && sk.len() == 3
        && sv.len() == 3
        && sq[0] == sk[0]
        && sk[0] == sv[0]
        && sq[2] == sk[2]
        && sk[1] == sv[1];
    if !ok {
        return Err(NnError::ShapeMismatch {
            op: "attention",
            left: sq,
            right: sk,
        });
    }
    let d = sq[2] as f64;
    let kt = g.transpose(k);
    let scores = g.batch_matmul(q, kt);
    let scores = g.scale(scores, 1.0 / d.sqrt());
    let weights = g.softmax(scores, None);
    let out = g.batch_matmul(weights, v);
    Ok((out, weights))
}

/// LSTM cell with gate order (input, forget, candidate, output).
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl LstmCell {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = input_dim + hidden_dim;
        let weight = params.add(
            format!("{name}.weight"),
            Tensor::uniform_fan_in(&[fan_in, 4 * hidden_dim], fan_in, rng),
        );
        let bias = params.add(format!("{name}.bias"), Tensor::zeros(&[4 * hidden_dim]));
        Self {
            weight,
            bias,
            input_dim,
            hidden_dim,
        }
    }

    /// One recurrent step on `[B, input]` with state `([B, H], [B, H])`.
    pub fn step(
        &self,
        g: &mut Graph,
        params: &ParamSet,
        x: Var,
        hidden: Var,
        cell: Var,
    ) -> Result<(Var, Var), NnError> {
        let (sx, sh, sc) = (g.shape(x).to_vec(), g.shape(hidden).to_vec(), g.shape(cell).to_vec());
        let h = self.hidden_dim;
        if sx.len() != 2 || sx[1] != self.input_dim || sh != [sx[0], h] || sc != sh {
            return Err(NnError::ShapeMismatch {
                op: "lstm step",
                left: sx,
                right: sh,
            });
        }
        let w = g.param(params, self.weight);
        let b = g.param(params, self.bias);
        let xh = g.concat(&[x, hidden]);
        let gates = dense(g, w, b, xh, Activation::Identity);
        let i = g.slice(gates, 0, h);
        let f = g.slice(gates, h, h);
        let c_hat = g.slice(gates, 2 * h, h);
        let o = g.slice(gates, 3 * h, h);
        let i = g.sigmoid(i);
        let f = g.sigmoid(f);
        let c_hat = g.tanh(c_hat);
        let o = g.sigmoid(o);
        let keep = g.mul(f, cell);
        let write = g.mul(i, c_hat);
        let cell_next = g.add(keep, write);
        let squashed = g.tanh(cell_next);
        let hidden_next = g.mul(o, squashed);
        Ok((hidden_next, cell_next))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{grad_check, grad_check_params};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn identity_dense_passes_input_through() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(1, 3, vec![1.0, -2.0, 3.0]).unwrap());
        let mut eye = vec![0.0; 9];
        for i in 0..3 {
            eye[i * 3 + i] = 1.0;
        }
        let w = g.constant(Tensor::matrix(3, 3, eye).unwrap());
        let b = g.constant(Tensor::zeros(&[3]));
        let y = dense(&mut g, w, b, x, Activation::Identity);
        assert_eq!(g.value(y).data(), &[1.0, -2.0, 3.0]);
    }

    #[test]
    fn relu_on_negative_preactivation_blocks_gradient() {
        let mut g = Graph::new();
        let x = g.input(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
        let w = g.constant(Tensor::matrix(2, 2, vec![-1.0, -1.0, -1.0, -1.0]).unwrap());
        let b = g.constant(Tensor::zeros(&[2]));
        let y = dense(&mut g, w, b, x, Activation::Relu);
        let s = g.sum(y);
        assert_eq!(g.value(y).data(), &[0.0, 0.0]);
        let grads = g.backward(s);
        assert_eq!(grads.wrt(x).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn mlp_shapes_and_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut params = ParamSet::new();
        let mlp = Mlp::new(
            &mut params,
            "m",
            &[3, 4, 2],
            Activation::Tanh,
            Activation::Sigmoid,
            &mut rng,
        );
        assert_eq!(mlp.layers.len(), 2);
        let x = rand_tensor(&[2, 3], &mut rng);
        let report = grad_check_params(
            |g, p| {
                let xv = g.constant(x.clone());
                let y = mlp.forward(g, p, xv).unwrap();
                g.sum(y)
            },
            &params,
        );
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn dense_rejects_wrong_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = ParamSet::new();
        let layer = Dense::new(&mut p, "d", 3, 4, Activation::Tanh, &mut rng);
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[2, 5]));
        assert!(matches!(
            layer.forward(&mut g, &p, x),
            Err(NnError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn dense_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for act in [
            Activation::Identity,
            Activation::Sigmoid,
            Activation::Tanh,
            Activation::Relu,
        ] {
            let pts = vec![
                rand_tensor(&[2, 3], &mut rng),
                rand_tensor(&[3, 4], &mut rng),
                rand_tensor(&[4], &mut rng),
            ];
            let report = grad_check(
                |g, v| {
                    let y = dense(g, v[1], v[2], v[0], act);
                    let y2 = g.mul(y, y);
                    g.sum(y2)
                },
                &pts,
            );
            assert!(report.max_rel_error < 1e-4, "{act:?}: {report:?}");
        }
    }

    #[test]
    fn softmax_examples() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::row(vec![0.0, 0.0]));
        let p = softmax(&mut g, a, None).unwrap();
        assert_eq!(g.value(p).data(), &[0.5, 0.5]);

        let b = g.constant(Tensor::row(vec![5.0, 5.0, 5.0]));
        let p = softmax(&mut g, b, Some(&[true, true, false])).unwrap();
        assert_eq!(g.value(p).data(), &[0.5, 0.5, 0.0]);

        let c = g.constant(Tensor::row(vec![1000.0, 0.0]));
        let p = softmax(&mut g, c, None).unwrap();
        let v = g.value(p).data();
        assert_eq!(v[0], 1.0);
        assert!(v[1] >= 0.0 && v[1] < 1e-300 && v.iter().all(|x| x.is_finite()));

        let d = g.constant(Tensor::row(vec![1.0, 2.0]));
        assert!(matches!(
            softmax(&mut g, d, Some(&[false, false])),
            Err(NnError::AllMasked)
        ));
    }

    #[test]
    fn attention_single_token_returns_value() {
        let mut g = Graph::new();
        let q = g.constant(Tensor::new(vec![1, 1, 2], vec![0.3, -0.7]).unwrap());
        let k = g.constant(Tensor::new(vec![1, 1, 2], vec![1.2, 0.1]).unwrap());
        let v = g.constant(Tensor::new(vec![1, 1, 3], vec![4.0, 5.0, 6.0]).unwrap());
        let (out, w) = attention(&mut g, q, k, v).unwrap();
        assert_eq!(g.value(w).data(), &[1.0]);
        assert_eq!(g.value(out).data(), &[4.0, 5.0, 6.0]);
    }

    #[test]
    fn attention_identical_keys_split_evenly() {
        let mut g = Graph::new();
        let q = g.constant(Tensor::new(vec![1, 1, 2], vec![3.0, -1.0]).unwrap());
        let k = g.constant(Tensor::new(vec![1, 2, 2], vec![0.5, 0.2, 0.5, 0.2]).unwrap());
        let v = g.constant(Tensor::new(vec![1, 2, 1], vec![1.0, 3.0]).unwrap());
        let (out, w) = attention(&mut g, q, k, v).unwrap();
        assert_eq!(g.value(w).data(), &[0.5, 0.5]);
        assert!((g.value(out).item() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn attention_rejects_mismatched_dims() {
        let mut g = Graph::new();
        let q = g.constant(Tensor::zeros(&[1, 2, 3]));
        let k = g.constant(Tensor::zeros(&[1, 2, 4]));
        let v = g.constant(Tensor::zeros(&[1, 2, 4]));
        assert!(attention(&mut g, q, k, v).is_err());
    }

    #[test]
    fn attention_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts = vec![
            rand_tensor(&[2, 3, 4], &mut rng),
            rand_tensor(&[2, 3, 4], &mut rng),
            rand_tensor(&[2, 3, 5], &mut rng),
        ];
        let report = grad_check(
            |g, v| {
                let (out, _) = attention(g, v[0], v[1], v[2]).unwrap();
                let sq = g.mul(out, out);
                g.sum(sq)
            },
            &pts,
        );
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn lstm_zero_weights_give_zero_hidden() {
        let mut p = ParamSet::new();
        let cell = LstmCell {
            weight: p.add("w", Tensor::zeros(&[5, 8])),
            bias: p.add("b", Tensor::zeros(&[8])),
            input_dim: 3,
            hidden_dim: 2,
        };
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(1, 3, vec![1.0, 2.0, 3.0]).unwrap());
        let h = g.constant(Tensor::zeros(&[1, 2]));
        let c = g.constant(Tensor::zeros(&[1, 2]));
        let (h1, _) = cell.step(&mut g, &p, x, h, c).unwrap();
        assert_eq!(g.value(h1).data(), &[0.0, 0.0]);
    }

    #[test]
    fn lstm_saturated_forget_gate_keeps_cell() {
        let mut p = ParamSet::new();
        let mut bias = vec![0.0; 8];
        bias[2] = 50.0;
        bias[3] = 50.0;
        let cell = LstmCell {
            weight: p.add("w", Tensor::zeros(&[5, 8])),
            bias: p.add("b", Tensor::vector(bias)),
            input_dim: 3,
            hidden_dim: 2,
        };
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(1, 3, vec![0.4, -2.0, 1.0]).unwrap());
        let h = g.constant(Tensor::matrix(1, 2, vec![0.1, 0.2]).unwrap());
        let c = g.constant(Tensor::matrix(1, 2, vec![0.7, -1.3]).unwrap());
        let (_, c1) = cell.step(&mut g, &p, x, h, c).unwrap();
        let v = g.value(c1).data();
        assert!((v[0] - 0.7).abs() < 1e-12 && (v[1] + 1.3).abs() < 1e-12);
    }

    #[test]
    fn lstm_bptt_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (input, hidden, steps) = (3, 4, 5);
        let mut p = ParamSet::new();
        let cell = LstmCell::new(&mut p, "lstm", input, hidden, &mut rng);
        let b = p.by_name("lstm.bias").unwrap();
        *p.get_mut(b) = rand_tensor(&[4 * hidden], &mut rng);
        let xs: Vec<Tensor> = (0..steps).map(|_| rand_tensor(&[2, input], &mut rng)).collect();
        let report = grad_check_params(
            |g, p| {
                let mut h = g.constant(Tensor::zeros(&[2, hidden]));
                let mut c = g.constant(Tensor::zeros(&[2, hidden]));
                for x in &xs {
                    let x = g.constant(x.clone());
                    (h, c) = cell.step(g, p, x, h, c).unwrap();
                }
                let sq = g.mul(h, h);
                g.sum(sq)
            },
            &p,
        );
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }
}
