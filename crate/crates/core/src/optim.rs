//! AdamW with decoupled weight decay.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub betas: (f64, f64),
    pub weight_decay: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            betas: (0.9, 0.95),
            weight_decay: 0.02,
            eps: 1e-8,
        }
    }
}

/// First and second moments per parameter plus the step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(params: &[Tensor]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self { step: 0, m: zeros(), v: zeros() }
    }

    pub fn matches(&self, params: &[Tensor]) -> bool {
        self.m.len() == params.len()
            && self.v.len() == params.len()
            && params
                .iter()
                .zip(self.m.iter().zip(&self.v))
                .all(|(p, (m, v))| p.shape() == m.shape() && p.shape() == v.shape())
    }
}

/// One AdamW update: `θ ← θ − lr·λ·θ`, then the bias-corrected Adam step.
///
/// Every gradient is checked before any parameter changes, so a
/// non-finite gradient leaves params and state untouched.
pub fn adamw_step(
    params: &mut [Tensor],
    names: &[String],
    grads: &[Tensor],
    state: &mut OptimizerState,
    lr: f64,
    cfg: &AdamWConfig,
) -> Result<()> {
    if !(lr >= 0.0) {
        return Err(contract("adamw_step: learning rate must be non-negative"));
    }
    if grads.len() != params.len() || names.len() != params.len() || !state.matches(params) {
        return Err(contract("adamw_step: params, grads, names and state disagree"));
    }
    for ((p, g), name) in params.iter().zip(grads).zip(names) {
        if p.shape() != g.shape() {
            return Err(Error::Shape {
                op: "adamw_step",
                lhs: p.shape().into(),
                rhs: g.shape().into(),
            });
        }
        if let Some(i) = g.data().iter().position(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient in {name} at entry {i}")));
        }
    }
    state.step += 1;
    let (b1, b2) = cfg.betas;
    let t = state.step as f64;
    let c1 = 1.0 - libm::pow(b1, t);
    let c2 = 1.0 - libm::pow(b2, t);
    let decay = 1.0 - lr * cfg.weight_decay;
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        let (p, m, v) = (p.data_mut(), m.data_mut(), v.data_mut());
        for i in 0..p.len() {
            let gi = g.data()[i];
            if cfg.weight_decay != 0.0 {
                p[i] *= decay;
            }
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            p[i] -= lr * mh / (libm::sqrt(vh) + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i}")).collect()
    }

    #[test]
    fn decay_only_with_zero_gradients() {
        let mut p = vec![Tensor::matrix(1, 3, vec![1.0, -2.0, 0.5]).unwrap()];
        let g = vec![Tensor::zeros(&[1, 3])];
        let mut s = OptimizerState::new(&p);
        adamw_step(&mut p, &names(1), &g, &mut s, 0.1, &AdamWConfig::default()).unwrap();
        for (a, b) in p[0].data().iter().zip([1.0, -2.0, 0.5]) {
            assert!((a - b * 0.998).abs() < 1e-15);
        }
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_closed_form() {
        let mut p = vec![Tensor::scalar(0.0)];
        let mut s = OptimizerState::new(&p);
        adamw_step(&mut p, &names(1), &[Tensor::scalar(1.0)], &mut s, 1e-3, &AdamWConfig::default()).unwrap();
        assert!((p[0].item() + 1e-3 / (1.0 + 1e-8)).abs() < 1e-18);
    }

    #[test]
    fn quadratic_matches_reference_sequence() {
        // θ_{t+1} from a numpy transcription of the update, β₂ = β₁², λ = 0,
        // on f(θ) = ½·Σ a_i θ_i².
        let expected = [
            [0.9900000001, -1.9900000000166667, 0.5099999996],
            [0.9799974936522065, -1.9799987189697987, 0.5199943388728165],
            [0.9699908127917823, -1.9699953143605586, 0.5299795393453863],
            [0.9599783173042311, -1.9599889667195738, 0.5399524241780961],
            [0.9499584135281968, -1.94997889020788, 0.5499101676509188],
        ];
        let a = [1.0, 3.0, -0.5];
        let cfg = AdamWConfig { betas: (0.9, 0.81), weight_decay: 0.0, eps: 1e-8 };
        let mut p = vec![Tensor::matrix(1, 3, vec![1.0, -2.0, 0.5]).unwrap()];
        let mut s = OptimizerState::new(&p);
        for row in expected {
            let g: Vec<f64> = p[0].data().iter().zip(a).map(|(t, a)| a * t).collect();
            adamw_step(&mut p, &names(1), &[Tensor::matrix(1, 3, g).unwrap()], &mut s, 0.01, &cfg).unwrap();
            for (x, e) in p[0].data().iter().zip(row) {
                assert!((x - e).abs() < 1e-12, "{x} vs {e}");
            }
        }
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = vec![Tensor::scalar(1.0), Tensor::scalar(2.0)];
        let before = p.clone();
        let mut s = OptimizerState::new(&p);
        let g = [Tensor::scalar(0.5), Tensor::scalar(f64::NAN)];
        let err = adamw_step(&mut p, &names(2), &g, &mut s, 0.1, &AdamWConfig::default()).unwrap_err();
        assert!(matches!(&err, Error::Numeric(m) if m.contains("p1")));
        assert_eq!(p, before);
        assert_eq!(s.step, 0);
    }

    #[test]
    fn runs_are_bit_identical() {
        let run = || {
            let mut p = vec![Tensor::matrix(2, 2, vec![0.1, 0.2, -0.3, 0.4]).unwrap()];
            let mut s = OptimizerState::new(&p);
            for k in 0..10 {
                let g: Vec<f64> = p[0].data().iter().map(|x| libm::sin(x * k as f64)).collect();
                adamw_step(&mut p, &names(1), &[Tensor::matrix(2, 2, g).unwrap()], &mut s, 0.05, &AdamWConfig::default()).unwrap();
            }
            (p, s)
        };
        let (a, sa) = run();
        let (b, sb) = run();
        assert!(a[0].data().iter().zip(b[0].data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(sa, sb);
    }
}
