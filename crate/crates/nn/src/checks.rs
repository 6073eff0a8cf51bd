//! Catalogue of every differentiable primitive with a scalar probe, so the
//! gradient suite can be run from tests in any crate.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::gradcheck::{grad_check, GradCheckReport};
use crate::graph::{Graph, Var};
use crate::layers::{attention, dense, Activation};
use crate::params::ParamSet;
use crate::tensor::Tensor;

pub struct OpCase {
    pub name: &'static str,
    pub shapes: Vec<Vec<usize>>,
    /// Sample inputs from (0.5, 2) instead of (-1, 1), for `ln`.
    pub positive: bool,
    pub build: fn(&mut Graph, &[Var]) -> Var,
}

/// Reduces `y` to a scalar with fixed, non-uniform weights so that every
/// output coordinate contributes a distinct adjoint.
pub fn weighted_sum(g: &mut Graph, y: Var) -> Var {
    let shape = g.shape(y).to_vec();
    let n: usize = shape.iter().product();
    let w: Vec<f64> = (0..n).map(|i| ((i as f64) * 0.7 + 0.3).sin()).collect();
    let w = g.constant(Tensor::new(shape, w).expect("shape"));
    let p = g.mul(y, w);
    g.sum(p)
}

/// Shifts every `*.bias` parameter by a seeded offset in (-0.2, 0.2) so that
/// freshly initialised (zero) biases do not sit on a relu kink.
pub fn jitter_biases(params: &mut ParamSet, seed: u64) {
    let mut rng = StdRng::seed_from_u64(seed);
    let biases: Vec<_> = params
        .ids()
        .zip(params.iter())
        .filter(|(_, (name, _))| name.ends_with(".bias"))
        .map(|(id, _)| id)
        .collect();
    for id in biases {
        for x in params.get_mut(id).data_mut() {
            *x += rng.gen_range(-0.2..0.2);
        }
    }
}

fn mask_2x4() -> std::rc::Rc<[bool]> {
    vec![true, false, true, true, false, true, true, false].into()
}

pub fn kernel_op_cases() -> Vec<OpCase> {
    fn case(name: &'static str, shapes: &[&[usize]], build: fn(&mut Graph, &[Var]) -> Var) -> OpCase {
        OpCase {
            name,
            shapes: shapes.iter().map(|s| s.to_vec()).collect(),
            positive: false,
            build,
        }
    }
    let mut cases = vec![
        case("matmul", &[&[3, 4], &[4, 2]], |g, v| {
            let y = g.matmul(v[0], v[1]);
            weighted_sum(g, y)
        }),
        case("batch_matmul", &[&[2, 3, 4], &[2, 4, 2]], |g, v| {
            let y = g.batch_matmul(v[0], v[1]);
            weighted_sum(g, y)
        }),
        case("add", &[&[2, 3], &[2, 3]], |g, v| {
            let y = g.add(v[0], v[1]);
            weighted_sum(g, y)
        }),
        case("sub", &[&[2, 3], &[2, 3]], |g, v| {
            let y = g.sub(v[0], v[1]);
            weighted_sum(g, y)
        }),
        case("mul", &[&[2, 3], &[2, 3]], |g, v| {
            let y = g.mul(v[0], v[1]);
            weighted_sum(g, y)
        }),
        case("min", &[&[2, 3], &[2, 3]], |g, v| {
            let y = g.min(v[0], v[1]);
            weighted_sum(g, y)
        }),
        case("add_row", &[&[3, 4], &[4]], |g, v| {
            let y = g.add_row(v[0], v[1]);
            weighted_sum(g, y)
        }),
        case("scale", &[&[5]], |g, v| {
            let y = g.scale(v[0], -2.5);
            weighted_sum(g, y)
        }),
        case("add_scalar", &[&[5]], |g, v| {
            let y = g.add_scalar(v[0], 0.75);
            let y = g.mul(y, y);
            weighted_sum(g, y)
        }),
        case("relu", &[&[2, 5]], |g, v| {
            let y = g.relu(v[0]);
            weighted_sum(g, y)
        }),
        case("sigmoid", &[&[2, 5]], |g, v| {
            let y = g.sigmoid(v[0]);
            weighted_sum(g, y)
        }),
        case("tanh", &[&[2, 5]], |g, v| {
            let y = g.tanh(v[0]);
            weighted_sum(g, y)
        }),
        case("exp", &[&[2, 5]], |g, v| {
            let y = g.exp(v[0]);
            weighted_sum(g, y)
        }),
        case("log_sigmoid", &[&[2, 5]], |g, v| {
            let x = g.scale(v[0], 8.0);
            let y = g.log_sigmoid(x);
            weighted_sum(g, y)
        }),
        case("clip", &[&[2, 5]], |g, v| {
            let y = g.clip(v[0], -0.5, 0.5);
            weighted_sum(g, y)
        }),
        case("softmax_masked", &[&[2, 4]], |g, v| {
            let y = g.softmax(v[0], Some(mask_2x4()));
            weighted_sum(g, y)
        }),
        case("log_softmax_masked", &[&[2, 4]], |g, v| {
            let y = g.log_softmax(v[0], Some(mask_2x4()));
            weighted_sum(g, y)
        }),
        case("concat", &[&[2, 3], &[2, 2]], |g, v| {
            let y = g.concat(&[v[0], v[1]]);
            weighted_sum(g, y)
        }),
        case("slice", &[&[3, 5]], |g, v| {
            let y = g.slice(v[0], 1, 3);
            weighted_sum(g, y)
        }),
        case("reshape", &[&[2, 6]], |g, v| {
            let y = g.reshape(v[0], &[3, 4]);
            let y = g.mul(y, y);
            weighted_sum(g, y)
        }),
        case("transpose", &[&[2, 3, 4]], |g, v| {
            let y = g.transpose(v[0]);
            weighted_sum(g, y)
        }),
        case("mean_axis1", &[&[2, 3, 4]], |g, v| {
            let y = g.mean_axis1(v[0]);
            weighted_sum(g, y)
        }),
        case("sum", &[&[3, 3]], |g, v| {
            let y = g.mul(v[0], v[0]);
            g.sum(y)
        }),
        case("mean", &[&[3, 3]], |g, v| {
            let y = g.mul(v[0], v[0]);
            g.mean(y)
        }),
        case("sum_last", &[&[3, 4]], |g, v| {
            let y = g.sum_last(v[0]);
            weighted_sum(g, y)
        }),
        case("gather", &[&[3, 4]], |g, v| {
            let y = g.gather(v[0], &[2, 0, 3]);
            weighted_sum(g, y)
        }),
        case("select_rows", &[&[4, 3]], |g, v| {
            let y = g.select_rows(v[0], &[3, 1, 3]);
            weighted_sum(g, y)
        }),
        case("scatter_rows", &[&[2, 3]], |g, v| {
            let y = g.scatter_rows(v[0], &[3, 0], 5);
            weighted_sum(g, y)
        }),
        case("dense_tanh", &[&[3, 4], &[4, 5], &[5]], |g, v| {
            let y = dense(g, v[1], v[2], v[0], Activation::Tanh);
            weighted_sum(g, y)
        }),
        case("attention", &[&[2, 4, 3], &[2, 4, 3], &[2, 4, 2]], |g, v| {
            let (y, _) = attention(g, v[0], v[1], v[2]).expect("shapes");
            weighted_sum(g, y)
        }),
        case("dense_softmax_loss", &[&[3, 4], &[4, 3], &[3]], |g, v| {
            let z = dense(g, v[1], v[2], v[0], Activation::Identity);
            let lp = g.log_softmax(z, None);
            let picked = g.gather(lp, &[0, 2, 1]);
            let s = g.mean(picked);
            g.neg(s)
        }),
    ];
    cases.push(OpCase {
        name: "ln",
        shapes: vec![vec![2, 5]],
        positive: true,
        build: |g, v| {
            let y = g.ln(v[0]);
            weighted_sum(g, y)
        },
    });
    cases
}

pub fn random_point(case: &OpCase, seed: u64) -> Vec<Tensor> {
    let mut rng = StdRng::seed_from_u64(seed);
    case.shapes
        .iter()
        .map(|s| {
            let n = s.iter().product();
            let data = (0..n)
                .map(|_| {
                    if case.positive {
                        rng.gen_range(0.5..2.0)
                    } else {
                        rng.gen_range(-1.0..1.0)
                    }
                })
                .collect();
            Tensor::new(s.clone(), data).expect("shape")
        })
        .collect()
}

pub fn check_case(case: &OpCase, seed: u64) -> GradCheckReport {
    grad_check(case.build, &random_point(case, seed))
}
