use crate::params::ParamSet;
use crate::tensor::Tensor;
use crate::NnError;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;

/// Adam optimizer state with bias-corrected moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub epsilon: f64,
    step_count: u64,
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &ParamSet, learning_rate: f64, epsilon: f64) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        Self {
            learning_rate,
            epsilon,
            step_count: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor]) -> Result<(), NnError> {
        if grads.len() != params.len() || self.first_moment.len() != params.len() {
            return Err(NnError::ShapeMismatch {
                op: "adam",
                left: vec![params.len()],
                right: vec![grads.len()],
            });
        }
        for (p, g) in params.tensors_mut().iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(NnError::ShapeMismatch {
                    op: "adam",
                    left: p.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        for ((p, g), (m, v)) in params
            .tensors_mut()
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut().zip(self.second_moment.iter_mut()))
        {
            let it = p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
            for ((w, &gi), (mi, vi)) in it {
                *mi = BETA1 * *mi + (1.0 - BETA1) * gi;
                *vi = BETA2 * *vi + (1.0 - BETA2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *w -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(x: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.add("x", Tensor::scalar(x));
        p
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = one(1.5);
        let mut adam = Adam::new(&p, 0.1, 1e-8);
        for _ in 0..5 {
            adam.step(&mut p, &[Tensor::scalar(0.0)]).unwrap();
        }
        assert_eq!(p.get(p.by_name("x").unwrap()).item(), 1.5);
        assert_eq!(adam.step_count(), 5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = one(0.0);
        let mut adam = Adam::new(&p, 3e-4, 1e-12);
        adam.step(&mut p, &[Tensor::scalar(7.0)]).unwrap();
        let x = p.get(p.by_name("x").unwrap()).item();
        assert!((x + 3e-4).abs() < 1e-12, "{x}");
    }

    #[test]
    fn quadratic_converges() {
        // The scalar recursion for f(x) = x^2 from x = 1 with lr 0.1.
        let mut p = one(1.0);
        let id = p.by_name("x").unwrap();
        let mut adam = Adam::new(&p, 0.1, 1e-8);
        for _ in 0..100 {
            let x = p.get(id).item();
            adam.step(&mut p, &[Tensor::scalar(2.0 * x)]).unwrap();
        }
        assert!(p.get(id).item().abs() < 0.05, "{}", p.get(id).item());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = one(0.0);
        let mut adam = Adam::new(&p, 0.1, 1e-8);
        assert!(adam.step(&mut p, &[Tensor::zeros(&[2])]).is_err());
        assert!(adam.step(&mut p, &[]).is_err());
    }
}
